//! The two-level harms taxonomy: harm types owning specific harms.
//!
//! A [`Taxonomy`] is loaded from a JSON document, validated as a whole, and
//! treated as immutable afterwards. Evolution happens by loading a new
//! version and comparing the two with [`diff_taxonomies`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bundled seed document (version 1.0.0, nine harm types, 69 specific harms).
pub const SEED_JSON: &str = include_str!("../seed/taxonomy-v1.json");

/// Bundled external-coverage mapping reproducing the published comparison table.
pub const COVERAGE_JSON: &str = include_str!("../seed/coverage.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub version: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
    pub harm_types: Vec<HarmType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmType {
    pub id: String,
    pub name: String,
    pub definition: String,
    pub specific_harms: Vec<SpecificHarm>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecificHarm {
    pub id: String,
    pub name: String,
    pub definition: String,
    /// Owning harm type id. Implied by nesting in the file format, so it is
    /// never written; on load it is filled from the enclosing harm type.
    #[serde(default, skip_serializing)]
    pub parent: String,
}

impl SpecificHarm {
    pub fn path(&self) -> String {
        format!("{}/{}", self.parent, self.id)
    }
}

/// Machine-readable violation code returned by [`validate_taxonomy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    EmptyTaxonomy,
    InvalidVersion,
    EmptyTitle,
    InvalidId,
    DuplicateHarmType,
    DuplicateSpecificHarm,
    EmptyName,
    EmptyDefinition,
    EmptyHarmType,
    OrphanSpecificHarm,
    ParentMismatch,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::EmptyTaxonomy => "EMPTY_TAXONOMY",
            Self::InvalidVersion => "INVALID_VERSION",
            Self::EmptyTitle => "EMPTY_TITLE",
            Self::InvalidId => "INVALID_ID",
            Self::DuplicateHarmType => "DUPLICATE_HARM_TYPE",
            Self::DuplicateSpecificHarm => "DUPLICATE_SPECIFIC_HARM",
            Self::EmptyName => "EMPTY_NAME",
            Self::EmptyDefinition => "EMPTY_DEFINITION",
            Self::EmptyHarmType => "EMPTY_HARM_TYPE",
            Self::OrphanSpecificHarm => "ORPHAN_SPECIFIC_HARM",
            Self::ParentMismatch => "PARENT_MISMATCH",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// `""` for the document, `harm_type` or `harm_type/specific_harm`.
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { code, path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}: {}", self.code, self.message)
        } else {
            write!(f, "{} at {}: {}", self.code, self.path, self.message)
        }
    }
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("malformed taxonomy document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    let mut out = format!("taxonomy failed validation ({} violation(s))", violations.len());
    for v in violations {
        out.push_str("\n  ");
        out.push_str(&v.to_string());
    }
    out
}

/// Parses and validates a taxonomy document.
pub fn load_taxonomy(document: &[u8]) -> Result<Taxonomy, TaxonomyError> {
    let mut taxonomy: Taxonomy = serde_json::from_slice(document)?;
    for harm_type in &mut taxonomy.harm_types {
        for specific in &mut harm_type.specific_harms {
            if specific.parent.is_empty() {
                specific.parent = harm_type.id.clone();
            }
        }
    }
    let violations = validate_taxonomy(&taxonomy);
    if violations.is_empty() {
        Ok(taxonomy)
    } else {
        Err(TaxonomyError::Invalid(violations))
    }
}

/// Writes the canonical JSON form: two-space indent, fixed key order,
/// document order for harm types and specific harms, trailing newline.
pub fn serialize_taxonomy(taxonomy: &Taxonomy) -> String {
    let mut out = serde_json::to_string_pretty(taxonomy).expect("taxonomy serializes");
    out.push('\n');
    out
}

fn is_slug(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('-')
        && !id.ends_with('-')
        && !id.contains("--")
        && id.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

fn is_semver(version: &str) -> bool {
    let core = version.split(['-', '+']).next().unwrap_or("");
    let parts: Vec<&str> = core.split('.').collect();
    parts.len() == 3
        && parts.iter().all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
}

/// Returns every invariant violation; an empty list means the taxonomy is valid.
pub fn validate_taxonomy(taxonomy: &Taxonomy) -> Vec<Violation> {
    use ViolationCode as C;
    let mut out = Vec::new();

    if !is_semver(&taxonomy.version) {
        out.push(Violation::new(
            C::InvalidVersion,
            "",
            format!("version {:?} is not a semantic version", taxonomy.version),
        ));
    }
    if taxonomy.title.trim().is_empty() {
        out.push(Violation::new(C::EmptyTitle, "", "title is empty"));
    }
    if taxonomy.harm_types.is_empty() {
        out.push(Violation::new(C::EmptyTaxonomy, "", "empty taxonomy"));
        return out;
    }

    let known: BTreeSet<&str> = taxonomy.harm_types.iter().map(|h| h.id.as_str()).collect();
    let mut seen_types = BTreeSet::new();
    for harm_type in &taxonomy.harm_types {
        let path = harm_type.id.as_str();
        if !is_slug(path) {
            out.push(Violation::new(C::InvalidId, path, format!("{path:?} is not a kebab-case slug")));
        }
        if !seen_types.insert(path) {
            out.push(Violation::new(C::DuplicateHarmType, path, "harm type id appears more than once"));
        }
        if harm_type.name.trim().is_empty() {
            out.push(Violation::new(C::EmptyName, path, "harm type name is empty"));
        }
        if harm_type.definition.trim().is_empty() {
            out.push(Violation::new(C::EmptyDefinition, path, "harm type definition is empty"));
        }
        if harm_type.specific_harms.is_empty() {
            out.push(Violation::new(C::EmptyHarmType, path, "harm type has no specific harms"));
        }

        let mut seen_specific = BTreeSet::new();
        for specific in &harm_type.specific_harms {
            let spath = format!("{}/{}", harm_type.id, specific.id);
            if !is_slug(&specific.id) {
                out.push(Violation::new(
                    C::InvalidId,
                    &spath,
                    format!("{:?} is not a kebab-case slug", specific.id),
                ));
            }
            if !seen_specific.insert(specific.id.as_str()) {
                out.push(Violation::new(
                    C::DuplicateSpecificHarm,
                    &spath,
                    "specific harm id appears more than once under this harm type",
                ));
            }
            if specific.name.trim().is_empty() {
                out.push(Violation::new(C::EmptyName, &spath, "specific harm name is empty"));
            }
            if specific.definition.trim().is_empty() {
                out.push(Violation::new(C::EmptyDefinition, &spath, "specific harm definition is empty"));
            }
            if !known.contains(specific.parent.as_str()) {
                out.push(Violation::new(
                    C::OrphanSpecificHarm,
                    &spath,
                    format!("parent {:?} is not a harm type of this taxonomy", specific.parent),
                ));
            } else if specific.parent != harm_type.id {
                out.push(Violation::new(
                    C::ParentMismatch,
                    &spath,
                    format!("declared parent {:?} but nested under {:?}", specific.parent, harm_type.id),
                ));
            }
        }
    }
    out
}

static SEED: OnceLock<Taxonomy> = OnceLock::new();

/// The bundled seed taxonomy.
pub fn seed() -> &'static Taxonomy {
    SEED.get_or_init(|| load_taxonomy(SEED_JSON.as_bytes()).expect("bundled seed taxonomy is valid"))
}

impl Taxonomy {
    pub fn harm_type(&self, id: &str) -> Option<&HarmType> {
        self.harm_types.iter().find(|h| h.id == id)
    }

    pub fn specific_harm(&self, harm_type_id: &str, specific_harm_id: &str) -> Option<&SpecificHarm> {
        self.harm_type(harm_type_id)?.specific_harms.iter().find(|s| s.id == specific_harm_id)
    }

    /// All specific harms in document order.
    pub fn specific_harms(&self) -> impl Iterator<Item = &SpecificHarm> {
        self.harm_types.iter().flat_map(|h| h.specific_harms.iter())
    }

    pub fn specific_harm_count(&self) -> usize {
        self.harm_types.iter().map(|h| h.specific_harms.len()).sum()
    }

    /// Position of each harm type and each `harm_type/specific_harm` path in
    /// document order. Used to give reports a stable taxonomy ordering.
    pub fn positions(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        let mut i = 0;
        for harm_type in &self.harm_types {
            out.insert(harm_type.id.clone(), i);
            i += 1;
            for specific in &harm_type.specific_harms {
                out.insert(format!("{}/{}", harm_type.id, specific.id), i);
                i += 1;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Lookup

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionRecord {
    pub path: String,
    pub name: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown taxonomy path {path:?}{}", suggestion_hint(.suggestions))]
pub struct UnknownPath {
    pub path: String,
    pub suggestions: Vec<String>,
}

fn suggestion_hint(suggestions: &[String]) -> String {
    if suggestions.is_empty() {
        String::new()
    } else {
        format!(" (did you mean {}?)", suggestions.join(", "))
    }
}

const MAX_SUGGESTIONS: usize = 3;

/// Resolves a harm type, or a specific harm under it, to its definition.
pub fn lookup(
    taxonomy: &Taxonomy,
    harm_type_id: &str,
    specific_harm_id: Option<&str>,
) -> Result<DefinitionRecord, UnknownPath> {
    match specific_harm_id {
        None => taxonomy
            .harm_type(harm_type_id)
            .map(|h| DefinitionRecord {
                path: h.id.clone(),
                name: h.name.clone(),
                definition: h.definition.clone(),
            })
            .ok_or_else(|| UnknownPath {
                path: harm_type_id.to_string(),
                suggestions: nearest(
                    harm_type_id,
                    taxonomy.harm_types.iter().map(|h| h.id.clone()),
                    |_| false,
                ),
            }),
        Some(specific_id) => taxonomy
            .specific_harm(harm_type_id, specific_id)
            .map(|s| DefinitionRecord {
                path: s.path(),
                name: s.name.clone(),
                definition: s.definition.clone(),
            })
            .ok_or_else(|| {
                let wanted = format!("{harm_type_id}/{specific_id}");
                let suffix = format!("/{specific_id}");
                UnknownPath {
                    suggestions: nearest(
                        &wanted,
                        taxonomy.specific_harms().map(SpecificHarm::path),
                        |candidate| candidate.ends_with(&suffix),
                    ),
                    path: wanted,
                }
            }),
    }
}

/// Closest candidates by normalized Levenshtein similarity. Candidates for
/// which `exact` holds (same leaf id under another parent) rank first.
fn nearest(
    wanted: &str,
    candidates: impl Iterator<Item = String>,
    exact: impl Fn(&str) -> bool,
) -> Vec<String> {
    let mut scored: Vec<(bool, f64, String)> = candidates
        .map(|c| (exact(&c), strsim::normalized_levenshtein(wanted, &c), c))
        .filter(|(e, s, _)| *e || *s >= 0.5)
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then_with(|| a.2.cmp(&b.2)));
    scored.into_iter().take(MAX_SUGGESTIONS).map(|(_, _, c)| c).collect()
}

// ---------------------------------------------------------------------------
// Diff

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    HarmType,
    SpecificHarm,
}

/// An added or removed node, with enough content to replay the change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub level: Level,
    pub path: String,
    pub name: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redefinition {
    pub path: String,
    pub old_definition: String,
    pub new_definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rename {
    pub path: String,
    pub old_name: String,
    pub new_name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyDiff {
    pub added: Vec<DiffEntry>,
    pub removed: Vec<DiffEntry>,
    pub redefined: Vec<Redefinition>,
    pub renamed: Vec<Rename>,
}

impl TaxonomyDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.redefined.is_empty() && self.renamed.is_empty()
    }
}

struct Node<'a> {
    level: Level,
    name: &'a str,
    definition: &'a str,
}

fn nodes(taxonomy: &Taxonomy) -> IndexMap<String, Node<'_>> {
    let mut out = IndexMap::new();
    for h in &taxonomy.harm_types {
        out.insert(
            h.id.clone(),
            Node { level: Level::HarmType, name: &h.name, definition: &h.definition },
        );
        for s in &h.specific_harms {
            out.insert(
                format!("{}/{}", h.id, s.id),
                Node { level: Level::SpecificHarm, name: &s.name, definition: &s.definition },
            );
        }
    }
    out
}

/// Compares two taxonomies node by node, keyed by id path.
///
/// Ids are stable across versions, so a changed name is a rename and a
/// changed definition a redefinition; a node whose id changed shows up as
/// one removal plus one addition. Entries follow document order (`old` for
/// removals, `new` for everything else).
pub fn diff_taxonomies(old: &Taxonomy, new: &Taxonomy) -> TaxonomyDiff {
    let old_nodes = nodes(old);
    let new_nodes = nodes(new);
    let mut diff = TaxonomyDiff::default();

    for (path, node) in &old_nodes {
        if !new_nodes.contains_key(path) {
            diff.removed.push(DiffEntry {
                level: node.level,
                path: path.clone(),
                name: node.name.to_string(),
                definition: node.definition.to_string(),
            });
        }
    }
    for (path, node) in &new_nodes {
        match old_nodes.get(path) {
            None => diff.added.push(DiffEntry {
                level: node.level,
                path: path.clone(),
                name: node.name.to_string(),
                definition: node.definition.to_string(),
            }),
            Some(before) => {
                if before.definition != node.definition {
                    diff.redefined.push(Redefinition {
                        path: path.clone(),
                        old_definition: before.definition.to_string(),
                        new_definition: node.definition.to_string(),
                    });
                }
                if before.name != node.name {
                    diff.renamed.push(Rename {
                        path: path.clone(),
                        old_name: before.name.to_string(),
                        new_name: node.name.to_string(),
                    });
                }
            }
        }
    }
    diff
}

/// Replays a diff onto `old`. New nodes are appended after existing ones, so
/// the result equals the diff's target up to ordering.
pub fn apply_diff(old: &Taxonomy, diff: &TaxonomyDiff) -> Taxonomy {
    let mut out = old.clone();
    let removed: BTreeSet<&str> = diff.removed.iter().map(|e| e.path.as_str()).collect();
    out.harm_types.retain(|h| !removed.contains(h.id.as_str()));
    for h in &mut out.harm_types {
        let prefix = h.id.clone();
        h.specific_harms.retain(|s| !removed.contains(format!("{prefix}/{}", s.id).as_str()));
    }

    for entry in diff.added.iter().filter(|e| e.level == Level::HarmType) {
        out.harm_types.push(HarmType {
            id: entry.path.clone(),
            name: entry.name.clone(),
            definition: entry.definition.clone(),
            specific_harms: Vec::new(),
        });
    }
    for entry in diff.added.iter().filter(|e| e.level == Level::SpecificHarm) {
        let (parent, id) = entry.path.split_once('/').expect("specific harm path has a parent");
        if let Some(h) = out.harm_types.iter_mut().find(|h| h.id == parent) {
            h.specific_harms.push(SpecificHarm {
                id: id.to_string(),
                name: entry.name.clone(),
                definition: entry.definition.clone(),
                parent: parent.to_string(),
            });
        }
    }

    let mut edit = |path: &str, f: &mut dyn FnMut(&mut String, &mut String)| {
        match path.split_once('/') {
            None => {
                if let Some(h) = out.harm_types.iter_mut().find(|h| h.id == path) {
                    f(&mut h.name, &mut h.definition);
                }
            }
            Some((parent, id)) => {
                if let Some(s) = out
                    .harm_types
                    .iter_mut()
                    .find(|h| h.id == parent)
                    .and_then(|h| h.specific_harms.iter_mut().find(|s| s.id == id))
                {
                    f(&mut s.name, &mut s.definition);
                }
            }
        }
    };
    for r in &diff.redefined {
        edit(&r.path, &mut |_, def| *def = r.new_definition.clone());
    }
    for r in &diff.renamed {
        edit(&r.path, &mut |name, _| *name = r.new_name.clone());
    }
    out
}

// ---------------------------------------------------------------------------
// Coverage comparison

/// External taxonomy name → harm type ids it addresses. Key order is kept.
pub type CoverageMapping = IndexMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    pub row_ids: Vec<String>,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[row][column]`
    pub cells: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoverageError {
    #[error("malformed coverage mapping: {0}")]
    Parse(String),
    #[error("coverage mapping for {external:?} references unknown harm type {harm_type:?}")]
    UnknownHarmType { external: String, harm_type: String },
}

pub fn parse_coverage_mapping(document: &[u8]) -> Result<CoverageMapping, CoverageError> {
    serde_json::from_slice(document).map_err(|e| CoverageError::Parse(e.to_string()))
}

/// The published comparison table as a mapping.
pub fn bundled_mapping() -> CoverageMapping {
    parse_coverage_mapping(COVERAGE_JSON.as_bytes()).expect("bundled coverage mapping parses")
}

pub fn coverage_matrix(taxonomy: &Taxonomy, mapping: &CoverageMapping) -> Result<CoverageMatrix, CoverageError> {
    for (external, ids) in mapping {
        if let Some(unknown) = ids.iter().find(|id| taxonomy.harm_type(id).is_none()) {
            return Err(CoverageError::UnknownHarmType {
                external: external.clone(),
                harm_type: unknown.clone(),
            });
        }
    }
    let cells = taxonomy
        .harm_types
        .iter()
        .map(|h| mapping.values().map(|ids| ids.contains(&h.id)).collect())
        .collect();
    Ok(CoverageMatrix {
        row_ids: taxonomy.harm_types.iter().map(|h| h.id.clone()).collect(),
        rows: taxonomy.harm_types.iter().map(|h| h.name.clone()).collect(),
        columns: mapping.keys().cloned().collect(),
        cells,
    })
}

impl CoverageMatrix {
    pub fn cell(&self, harm_type_id: &str, external: &str) -> Option<bool> {
        let r = self.row_ids.iter().position(|id| id == harm_type_id)?;
        let c = self.columns.iter().position(|name| name == external)?;
        Some(self.cells[r][c])
    }

    /// Renders the matrix as a Markdown table with check marks.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Harm type |");
        for c in &self.columns {
            out.push_str(&format!(" {c} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.columns.len()));
        out.push('\n');
        for (name, row) in self.rows.iter().zip(&self.cells) {
            out.push_str(&format!("| {name} |"));
            for &covered in row {
                out.push_str(if covered { " ✓ |" } else { "   |" });
            }
            out.push('\n');
        }
        out
    }
}
