use harmlens::taxonomy::{self, apply_diff, diff_taxonomies, load_taxonomy, serialize_taxonomy, Level, SpecificHarm};
use proptest::prelude::*;

#[test]
fn seed_round_trips_byte_for_byte() {
    let t = load_taxonomy(taxonomy::SEED_JSON.as_bytes()).unwrap();
    assert_eq!(serialize_taxonomy(&t), taxonomy::SEED_JSON);
    assert_eq!(load_taxonomy(serialize_taxonomy(&t).as_bytes()).unwrap(), t);
}

#[test]
fn seed_counts_per_harm_type() {
    let counts: Vec<usize> = taxonomy::seed().harm_types.iter().map(|h| h.specific_harms.len()).collect();
    assert_eq!(counts, [4, 4, 11, 2, 7, 11, 15, 7, 8]);
}

/// Applies a random sequence of edits to the seed.
fn edited(ops: &[(u8, usize, usize)]) -> taxonomy::Taxonomy {
    let mut t = taxonomy::seed().clone();
    for (i, &(op, h, s)) in ops.iter().enumerate() {
        let h = h % t.harm_types.len();
        let ht = &mut t.harm_types[h];
        let s = s % ht.specific_harms.len();
        match op % 4 {
            0 if ht.specific_harms.len() > 1 => {
                ht.specific_harms.remove(s);
            }
            1 => ht.specific_harms[s].definition.push_str(" Revised."),
            2 => ht.specific_harms[s].name = format!("{} ({i})", ht.specific_harms[s].name),
            _ => ht.specific_harms.push(SpecificHarm {
                id: format!("new-harm-{i}"),
                name: format!("New harm {i}"),
                definition: "A harm added in review.".into(),
                parent: ht.id.clone(),
            }),
        }
    }
    t.version = "1.1.0".into();
    t
}

fn sorted(mut t: taxonomy::Taxonomy) -> taxonomy::Taxonomy {
    for h in &mut t.harm_types {
        h.specific_harms.sort_by(|a, b| a.id.cmp(&b.id));
    }
    t.harm_types.sort_by(|a, b| a.id.cmp(&b.id));
    t
}

proptest! {
    #[test]
    fn diff_is_antisymmetric(ops in proptest::collection::vec((any::<u8>(), any::<usize>(), any::<usize>()), 0..12)) {
        let old = taxonomy::seed();
        let new = edited(&ops);
        let forward = diff_taxonomies(old, &new);
        let backward = diff_taxonomies(&new, old);
        let paths = |v: &[taxonomy::DiffEntry]| v.iter().map(|e| e.path.clone()).collect::<std::collections::BTreeSet<_>>();
        prop_assert_eq!(paths(&forward.added), paths(&backward.removed));
        prop_assert_eq!(paths(&forward.removed), paths(&backward.added));
        prop_assert_eq!(forward.redefined.len(), backward.redefined.len());
        prop_assert_eq!(forward.renamed.len(), backward.renamed.len());
        prop_assert!(forward.added.iter().all(|e| e.level == Level::SpecificHarm));
    }

    #[test]
    fn applying_a_diff_reaches_its_target(ops in proptest::collection::vec((any::<u8>(), any::<usize>(), any::<usize>()), 0..12)) {
        let old = taxonomy::seed();
        let mut new = edited(&ops);
        let mut replayed = apply_diff(old, &diff_taxonomies(old, &new));
        replayed.version = new.version.clone();
        new = sorted(new);
        prop_assert_eq!(sorted(replayed), new);
    }
}

#[test]
fn self_diff_is_empty() {
    assert!(diff_taxonomies(taxonomy::seed(), taxonomy::seed()).is_empty());
}
