//! Per-incident Sankey graphs and round summaries, with JSON/CSV export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{self, AgreementError, AgreementReport, StatusHandling, TrendSeries, UnitAgreement};
use crate::annotation::{Annotation, HarmStatus, Round};
use crate::taxonomy::Taxonomy;

/// Most disputed harms listed per incident and per round.
pub const MAX_DISPUTED: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    HarmType,
    SpecificHarm,
    Status,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyNode {
    pub id: String,
    pub layer: Layer,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyLink {
    pub source: String,
    pub target: String,
    pub weight: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyMeta {
    pub incident: String,
    pub round: String,
    /// Annotators who submitted, including those who selected nothing.
    pub annotators: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyGraph {
    pub nodes: Vec<SankeyNode>,
    pub links: Vec<SankeyLink>,
    pub meta: SankeyMeta,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("incident {incident:?} has no annotations in round {round:?}")]
    NoAnnotations { incident: String, round: String },
    #[error("{what} cannot be exported as {format}")]
    Unsupported { what: &'static str, format: ExportFormat },
    #[error(transparent)]
    Agreement(#[from] AgreementError),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NoAnnotations { .. } => "NO_ANNOTATIONS",
            Self::Unsupported { .. } => "UNSUPPORTED",
            Self::Agreement(e) => e.code(),
        }
    }
}

fn harm_type_node(id: &str) -> String {
    format!("harm_type:{id}")
}

fn specific_node(path: &str) -> String {
    format!("specific_harm:{path}")
}

fn status_node(status: HarmStatus) -> String {
    format!("status:{status}")
}

/// Layered flow of every annotator's selections for one incident.
///
/// Weights count annotators: `harm type → specific harm` is the number of
/// annotators selecting that specific harm, `specific harm → status` the
/// number selecting it with that status. Nodes follow taxonomy order
/// within each layer and links are ordered by (source, target) node position.
pub fn build_sankey(
    incident_id: &str,
    round_id: &str,
    annotations: &[&Annotation],
    taxonomy: &Taxonomy,
) -> Result<SankeyGraph, ReportError> {
    let mine: Vec<&&Annotation> =
        annotations.iter().filter(|a| a.incident_id == incident_id && a.round_id == round_id).collect();
    if mine.is_empty() {
        return Err(ReportError::NoAnnotations { incident: incident_id.into(), round: round_id.into() });
    }

    // path → (annotators selecting it, per status)
    let mut tally: BTreeMap<String, (u32, BTreeMap<HarmStatus, u32>)> = BTreeMap::new();
    for annotation in &mine {
        let mut seen: BTreeMap<String, BTreeSet<HarmStatus>> = BTreeMap::new();
        for s in &annotation.selections {
            seen.entry(s.path()).or_default().insert(s.status);
        }
        for (path, statuses) in seen {
            let entry = tally.entry(path).or_default();
            entry.0 += 1;
            for st in statuses {
                *entry.1.entry(st).or_default() += 1;
            }
        }
    }

    let mut nodes = Vec::new();
    let mut links = Vec::new();
    for harm_type in &taxonomy.harm_types {
        let chosen: Vec<_> = harm_type
            .specific_harms
            .iter()
            .filter_map(|s| tally.get(&s.path()).map(|t| (s, t)))
            .collect();
        if chosen.is_empty() {
            continue;
        }
        nodes.push(SankeyNode {
            id: harm_type_node(&harm_type.id),
            layer: Layer::HarmType,
            label: harm_type.name.clone(),
        });
        for (specific, (count, _)) in chosen {
            links.push(SankeyLink {
                source: harm_type_node(&harm_type.id),
                target: specific_node(&specific.path()),
                weight: *count,
            });
        }
    }
    for specific in taxonomy.specific_harms() {
        let Some((_, by_status)) = tally.get(&specific.path()) else { continue };
        nodes.push(SankeyNode {
            id: specific_node(&specific.path()),
            layer: Layer::SpecificHarm,
            label: specific.name.clone(),
        });
        for (status, count) in by_status {
            links.push(SankeyLink {
                source: specific_node(&specific.path()),
                target: status_node(*status),
                weight: *count,
            });
        }
    }
    let used: BTreeSet<HarmStatus> = tally.values().flat_map(|(_, s)| s.keys().copied()).collect();
    for status in used {
        let label = match status {
            HarmStatus::Actual => "Actual",
            HarmStatus::Potential => "Potential",
        };
        nodes.push(SankeyNode { id: status_node(status), layer: Layer::Status, label: label.into() });
    }

    let position: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    links.sort_by_key(|l| (position[l.source.as_str()], position[l.target.as_str()]));

    Ok(SankeyGraph {
        nodes,
        links,
        meta: SankeyMeta { incident: incident_id.into(), round: round_id.into(), annotators: mine.len() },
    })
}

impl SankeyGraph {
    /// Nodes of the middle layer whose inflow differs from their outflow.
    pub fn conservation_violations(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|n| n.layer == Layer::SpecificHarm)
            .filter(|n| {
                let inflow: u32 = self.links.iter().filter(|l| l.target == n.id).map(|l| l.weight).sum();
                let outflow: u32 = self.links.iter().filter(|l| l.source == n.id).map(|l| l.weight).sum();
                inflow != outflow
            })
            .map(|n| n.id.clone())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Round summary

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisputedHarm {
    pub path: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentSummary {
    pub incident_id: String,
    pub alpha: Option<f64>,
    pub degenerate: bool,
    pub annotators: usize,
    /// Harms selected by some but not all of this incident's annotators,
    /// lowest per-category alpha first.
    pub disputed: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub annotations: usize,
    pub selections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: String,
    pub round_id: String,
    pub taxonomy_version: String,
    /// Round-level set-mode alpha; absent when no incident is pairable.
    pub alpha: Option<AgreementReport>,
    pub incidents: Vec<IncidentSummary>,
    /// Harms with per-category alpha below 1, lowest first.
    pub disputed: Vec<DisputedHarm>,
    pub totals: Totals,
}

fn rank_disputed<'a>(paths: impl Iterator<Item = &'a String>, categories: &BTreeMap<String, AgreementReport>) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> =
        paths.filter_map(|p| categories.get(p).map(|r| (p.clone(), r.alpha))).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(MAX_DISPUTED);
    ranked
}

/// Summarizes a round: per-incident set-mode alpha, annotator counts, and
/// the most disputed specific harms.
pub fn round_summary(round: &Round, annotations: &[&Annotation]) -> Result<RoundSummary, ReportError> {
    let annotations: Vec<&Annotation> = annotations.iter().copied().filter(|a| a.round_id == round.round_id).collect();
    let (overall, per_incident, categories) = if annotations.is_empty() {
        (None, Vec::new(), BTreeMap::new())
    } else {
        let reliability = agreement::set_reliability(&annotations, StatusHandling::Ignore)?;
        let overall = match agreement::krippendorff_alpha(&reliability, &agreement::Masi) {
            Ok(r) => Some(r),
            Err(AgreementError::NoPairableUnits) => None,
            Err(e) => return Err(e.into()),
        };
        let categories = match agreement::per_category_agreement(&annotations) {
            Ok(c) => c,
            Err(AgreementError::FewerThanTwoAnnotators(_) | AgreementError::NoPairableUnits) => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        (overall, agreement::incident_alphas(&annotations, StatusHandling::Ignore)?, categories)
    };
    let by_unit: BTreeMap<&str, &UnitAgreement> = per_incident.iter().map(|u| (u.unit.as_str(), u)).collect();

    let incidents = round
        .incident_ids
        .iter()
        .map(|incident| {
            let anns: Vec<&&Annotation> = annotations.iter().filter(|a| &a.incident_id == incident).collect();
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for a in &anns {
                for path in a.selections.iter().map(|s| s.path()).collect::<BTreeSet<_>>() {
                    *counts.entry(path).or_default() += 1;
                }
            }
            let contested = counts.iter().filter(|(_, &c)| anns.len() >= 2 && c < anns.len()).map(|(p, _)| p);
            let unit = by_unit.get(incident.as_str());
            IncidentSummary {
                incident_id: incident.clone(),
                alpha: unit.and_then(|u| u.alpha),
                degenerate: unit.is_some_and(|u| u.degenerate),
                annotators: anns.len(),
                disputed: rank_disputed(contested, &categories).into_iter().map(|(p, _)| p).collect(),
            }
        })
        .collect();

    let below_one = categories.iter().filter(|(_, r)| r.alpha < 1.0).map(|(p, _)| p);
    let disputed = rank_disputed(below_one, &categories)
        .into_iter()
        .map(|(path, alpha)| DisputedHarm { path, alpha })
        .collect();

    Ok(RoundSummary {
        round: round.label.clone(),
        round_id: round.round_id.clone(),
        taxonomy_version: round.taxonomy_version.clone(),
        alpha: overall,
        incidents,
        disputed,
        totals: Totals {
            annotations: annotations.len(),
            selections: annotations.iter().map(|a| a.selections.len()).sum(),
        },
    })
}

// ---------------------------------------------------------------------------
// Export

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Json,
    Csv,
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportFormat::Json => "json",
            ExportFormat::Csv => "csv",
        })
    }
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(format!("unknown export format {other:?} (expected json or csv)")),
        }
    }
}

/// Anything the platform can export.
#[derive(Debug, Clone, Copy)]
pub enum Exportable<'a> {
    Sankey(&'a SankeyGraph),
    Summary(&'a RoundSummary),
    Agreement(&'a AgreementReport),
    Trend(&'a TrendSeries),
}

impl Exportable<'_> {
    fn kind(&self) -> &'static str {
        match self {
            Exportable::Sankey(_) => "sankey graph",
            Exportable::Summary(_) => "round summary",
            Exportable::Agreement(_) => "agreement report",
            Exportable::Trend(_) => "trend series",
        }
    }
}

/// Pretty JSON with a trailing newline, the byte form shared by the CLI and
/// the HTTP API.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report serializes");
    out.push(b'\n');
    out
}

fn fmt_alpha(alpha: Option<f64>) -> String {
    alpha.map(|a| a.to_string()).unwrap_or_default()
}

/// Deterministic bytes for a report or graph. CSV is defined for round
/// summaries only: a header row, then one row per incident.
pub fn export(item: Exportable<'_>, format: ExportFormat) -> Result<Vec<u8>, ReportError> {
    match (item, format) {
        (Exportable::Sankey(g), ExportFormat::Json) => Ok(to_json_bytes(g)),
        (Exportable::Summary(s), ExportFormat::Json) => Ok(to_json_bytes(s)),
        (Exportable::Agreement(r), ExportFormat::Json) => Ok(to_json_bytes(r)),
        (Exportable::Trend(t), ExportFormat::Json) => Ok(to_json_bytes(t)),
        (Exportable::Summary(s), ExportFormat::Csv) => {
            let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            writer
                .write_record(["incident_id", "alpha", "degenerate", "annotators", "disputed"])
                .expect("in-memory CSV write");
            for row in &s.incidents {
                writer
                    .write_record([
                        row.incident_id.clone(),
                        fmt_alpha(row.alpha),
                        row.degenerate.to_string(),
                        row.annotators.to_string(),
                        row.disputed.join(";"),
                    ])
                    .expect("in-memory CSV write");
            }
            Ok(writer.into_inner().expect("in-memory CSV flushes"))
        }
        (other, ExportFormat::Csv) => Err(ReportError::Unsupported { what: other.kind(), format }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::HarmSelection;
    use crate::taxonomy::seed;
    use chrono::{TimeZone, Utc};
    use HarmStatus::{Actual, Potential};

    fn ann(incident: &str, annotator: &str, sels: &[(&str, &str, HarmStatus)]) -> Annotation {
        Annotation {
            incident_id: incident.into(),
            annotator_id: annotator.into(),
            round_id: "round-1".into(),
            selections: sels.iter().map(|(h, s, st)| HarmSelection::new(h, s, *st)).collect(),
            comment: None,
            submitted_at: Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap(),
            taxonomy_version: "1.0.0".into(),
        }
    }

    fn round(incidents: &[&str]) -> Round {
        Round {
            round_id: "round-1".into(),
            label: "round-1".into(),
            taxonomy_version: "1.0.0".into(),
            incident_ids: incidents.iter().map(|s| s.to_string()).collect(),
            opened_at: Utc.with_ymd_and_hms(2024, 2, 1, 0, 0, 0).unwrap(),
            closed_at: None,
        }
    }

    fn link(g: &SankeyGraph, source: &str, target: &str) -> Option<u32> {
        g.links.iter().find(|l| l.source == source && l.target == target).map(|l| l.weight)
    }

    #[test]
    fn unanimous_sankey() {
        let anns: Vec<Annotation> =
            ["a", "b", "c"].iter().map(|w| ann("i1", w, &[("psychological", "addiction", Actual)])).collect();
        let refs: Vec<&Annotation> = anns.iter().collect();
        let g = build_sankey("i1", "round-1", &refs, seed()).unwrap();
        let labels: Vec<&str> = g.nodes.iter().map(|n| n.label.as_str()).collect();
        assert_eq!(labels, ["Psychological", "Addiction", "Actual"]);
        assert_eq!(
            g.links,
            [
                SankeyLink { source: "harm_type:psychological".into(), target: "specific_harm:psychological/addiction".into(), weight: 3 },
                SankeyLink { source: "specific_harm:psychological/addiction".into(), target: "status:actual".into(), weight: 3 },
            ]
        );
    }

    #[test]
    fn split_status_conserves_flow() {
        let anns = [
            ann("i1", "a", &[("psychological", "addiction", Actual)]),
            ann("i1", "b", &[("psychological", "addiction", Actual)]),
            ann("i1", "c", &[("psychological", "addiction", Potential)]),
            ann("i1", "d", &[]),
        ];
        let refs: Vec<&Annotation> = anns.iter().collect();
        let g = build_sankey("i1", "round-1", &refs, seed()).unwrap();
        assert_eq!(link(&g, "harm_type:psychological", "specific_harm:psychological/addiction"), Some(3));
        assert_eq!(link(&g, "specific_harm:psychological/addiction", "status:actual"), Some(2));
        assert_eq!(link(&g, "specific_harm:psychological/addiction", "status:potential"), Some(1));
        assert!(g.conservation_violations().is_empty());
        assert_eq!(g.meta.annotators, 4);
    }

    #[test]
    fn empty_selection_contributes_nothing_but_is_counted() {
        let anns = [ann("i1", "a", &[])];
        let refs: Vec<&Annotation> = anns.iter().collect();
        let g = build_sankey("i1", "round-1", &refs, seed()).unwrap();
        assert!(g.nodes.is_empty() && g.links.is_empty());
        assert_eq!(g.meta.annotators, 1);
        assert!(matches!(build_sankey("i2", "round-1", &refs, seed()), Err(ReportError::NoAnnotations { .. })));
    }

    #[test]
    fn nodes_follow_taxonomy_order() {
        let anns = [ann(
            "i1",
            "a",
            &[("environmental", "pollution", Potential), ("autonomy", "ip-copyright-loss", Actual), ("autonomy", "autonomy-agency-loss", Actual)],
        )];
        let refs: Vec<&Annotation> = anns.iter().collect();
        let g = build_sankey("i1", "round-1", &refs, seed()).unwrap();
        let ids: Vec<&str> = g.nodes.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "harm_type:autonomy",
                "harm_type:environmental",
                "specific_harm:autonomy/autonomy-agency-loss",
                "specific_harm:autonomy/ip-copyright-loss",
                "specific_harm:environmental/pollution",
                "status:actual",
                "status:potential",
            ]
        );
    }

    #[test]
    fn unanimous_round_has_no_disputes() {
        let mut anns = Vec::new();
        for i in ["i1", "i2"] {
            for w in ["a", "b", "c"] {
                anns.push(ann(i, w, &[("psychological", "addiction", Actual)]));
            }
        }
        let refs: Vec<&Annotation> = anns.iter().collect();
        let s = round_summary(&round(&["i1", "i2"]), &refs).unwrap();
        assert!(s.incidents.iter().all(|r| r.alpha == Some(1.0) && r.degenerate && r.disputed.is_empty()));
        assert!(s.disputed.is_empty());
        assert_eq!(s.totals, Totals { annotations: 6, selections: 6 });
    }

    #[test]
    fn contested_harm_heads_the_list() {
        let mut anns = Vec::new();
        for (i, incident) in ["i1", "i2", "i3"].iter().enumerate() {
            for w in ["a", "b", "c"] {
                let mut sels = vec![("psychological", "addiction", Actual)];
                if i > 0 {
                    sels.push(("physical", "bodily-injury", Potential));
                }
                if w == "a" {
                    sels.push(("reputational", "defamation-libel-slander", Actual));
                }
                anns.push(ann(incident, w, &sels));
            }
        }
        let refs: Vec<&Annotation> = anns.iter().collect();
        let s = round_summary(&round(&["i1", "i2", "i3", "i4"]), &refs).unwrap();
        assert_eq!(s.disputed.len(), 1);
        assert_eq!(s.disputed[0].path, "reputational/defamation-libel-slander");
        assert!(s.incidents[..3].iter().all(|r| r.disputed == ["reputational/defamation-libel-slander"]));
        assert_eq!(s.incidents[3].annotators, 0);
        assert_eq!(s.incidents[3].alpha, None);
        assert_eq!(s.totals.selections, 3 + 6 + 6 + 3);
    }

    #[test]
    fn export_rules() {
        let anns = [ann("i1", "a", &[("psychological", "addiction", Actual)]), ann("i1", "b", &[])];
        let refs: Vec<&Annotation> = anns.iter().collect();
        let g = build_sankey("i1", "round-1", &refs, seed()).unwrap();
        let once = export(Exportable::Sankey(&g), ExportFormat::Json).unwrap();
        let twice = export(Exportable::Sankey(&g.clone()), ExportFormat::Json).unwrap();
        assert_eq!(once, twice);
        let v: serde_json::Value = serde_json::from_slice(&once).unwrap();
        assert_eq!(v["meta"]["annotators"], 2);
        assert_eq!(v["nodes"][0]["layer"], "harm_type");

        let err = export(Exportable::Sankey(&g), ExportFormat::Csv).unwrap_err();
        assert_eq!(err.code(), "UNSUPPORTED");

        let s = round_summary(&round(&["i1", "i2"]), &refs).unwrap();
        let csv = String::from_utf8(export(Exportable::Summary(&s), ExportFormat::Csv).unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "incident_id,alpha,degenerate,annotators,disputed");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("i2,,false,0,"));
    }
}
