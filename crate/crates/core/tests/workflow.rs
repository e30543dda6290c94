use std::collections::BTreeSet;

use harmlens::agreement::{Mode, StatusHandling};
use harmlens::annotation::{SelectionInput, Submission};
use harmlens::incidents::{IncidentQuery, IncidentStore, IngestFormat};
use harmlens::report::{build_sankey, Layer};
use harmlens::{taxonomy, Platform};
use harmlens_testkit::{epoch, random_incident_annotations, rng, trend_corpus};
use proptest::prelude::*;

const FIXTURE: &[u8] = include_bytes!("../fixtures/incidents-39.csv");

fn store() -> IncidentStore {
    let mut s = IncidentStore::new();
    s.ingest(FIXTURE, IngestFormat::Csv, epoch()).unwrap();
    s
}

proptest! {
    #[test]
    fn pages_partition_the_result_set(limit in 1usize..20, sector in proptest::option::of(prop_oneof![Just("Health"), Just("Finance")])) {
        let s = store();
        let base = IncidentQuery { sector: sector.map(String::from), ..IncidentQuery::all() };
        let everything = s.query(&base).unwrap();
        let mut seen = Vec::new();
        let mut offset = 0;
        loop {
            let page = s.query(&IncidentQuery { offset, limit, ..base.clone() }).unwrap();
            prop_assert_eq!(page.total, everything.total);
            if page.items.is_empty() {
                break;
            }
            prop_assert!(page.items.len() <= limit);
            seen.extend(page.items.into_iter().map(|i| i.id));
            offset += limit;
        }
        let all_ids: Vec<String> = everything.items.into_iter().map(|i| i.id).collect();
        prop_assert_eq!(seen, all_ids);
    }
}

#[test]
fn reingest_upserts_by_id() {
    let mut s = store();
    let again = s.ingest(FIXTURE, IngestFormat::Csv, epoch()).unwrap();
    assert_eq!((again.added, again.updated, again.unchanged), (0, 0, 39));

    let edited = String::from_utf8(FIXTURE.to_vec()).unwrap().replacen("SYN0001,", "SYN0001,Retitled ", 1);
    let report = s.ingest(edited.as_bytes(), IngestFormat::Csv, epoch()).unwrap();
    assert_eq!((report.added, report.updated, report.unchanged), (0, 1, 38));
    assert_eq!(s.len(), 39);
    assert!(s.get("SYN0001").unwrap().title.starts_with("Retitled "));
}

#[test]
fn text_search_finds_deepfakes() {
    let page = store().query(&IncidentQuery { text: Some("DEEPFAKE".into()), ..IncidentQuery::all() }).unwrap();
    assert_eq!(page.total, 4);
}

#[test]
fn sankey_conserves_flow_on_random_fixtures() {
    let t = taxonomy::seed();
    let mut r = rng(99);
    for case in 0..200 {
        let anns = random_incident_annotations(&mut r, t, "SYN0001", "round-1", 6);
        let refs: Vec<_> = anns.iter().collect();
        let g = build_sankey("SYN0001", "round-1", &refs, t).unwrap();
        assert!(g.conservation_violations().is_empty(), "case {case}");
        let layer1: u32 = g
            .links
            .iter()
            .filter(|l| g.nodes.iter().any(|n| n.id == l.source && n.layer == Layer::HarmType))
            .map(|l| l.weight)
            .sum();
        let tallies: usize = anns.iter().map(|a| a.selections.len()).sum();
        assert_eq!(layer1 as usize, tallies, "case {case}");
    }
}

#[test]
fn trend_rises_over_nine_rounds() {
    let t = taxonomy::seed();
    let ids: Vec<String> = (1..=39).map(|i| format!("SYN{i:04}")).collect();
    let mut p = Platform::in_memory();
    p.ingest(FIXTURE, IngestFormat::Csv).unwrap();
    for a in 0..5 {
        p.add_annotator(&format!("ann-{a}"), &format!("Annotator {a}")).unwrap();
    }
    for round in trend_corpus(2024, t, 9, &ids, 5) {
        p.open_round(&round.label, &t.version, &ids).unwrap();
        for ann in &round.annotations {
            p.submit(&Submission {
                incident_id: ann.incident_id.clone(),
                annotator_id: ann.annotator_id.clone(),
                round_id: round.label.clone(),
                selections: ann.selections.iter().map(SelectionInput::from).collect(),
                comment: None,
            })
            .unwrap();
        }
        p.close_round(&round.label).unwrap();
    }
    let series = p.trend().unwrap();
    let means: Vec<f64> = series.points.iter().map(|pt| pt.mean_alpha.unwrap()).collect();
    assert_eq!(means.len(), 9);
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
    assert!(means.iter().all(|m| *m <= 1.0));
    assert!(*means.last().unwrap() < 1.0);

    let first = p.agreement("round-1", Mode::Binary, StatusHandling::Distinguish, None).unwrap();
    let last = p.agreement("round-9", Mode::Binary, StatusHandling::Distinguish, None).unwrap();
    assert!(first.alpha < last.alpha);
    let labels: BTreeSet<&str> = series.points.iter().map(|pt| pt.round.as_str()).collect();
    assert_eq!(labels.len(), 9);
}
