//! Test support for harmlens: reference implementations that share no code
//! with the library, and seeded fixture generators.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, TimeZone, Utc};
use harmlens::annotation::{Annotation, HarmSelection, HarmStatus};
use harmlens::taxonomy::Taxonomy;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reference result of [`oracle_alpha`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleAlpha {
    pub alpha: f64,
    pub d_o: f64,
    pub d_e: f64,
    pub n: usize,
}

/// Krippendorff's alpha by direct pair enumeration.
///
/// `rows[u][a]` is annotator `a`'s value for unit `u`. Units with fewer
/// than two values are dropped. Observed disagreement sums `δ` over ordered
/// pairs inside each unit, weighted by `1/(m_u − 1)`; expected disagreement
/// sums `δ` over every ordered pair of distinct pooled values. Returns
/// `None` when nothing is pairable; alpha is `1` when `D_e = 0`.
pub fn oracle_alpha<V>(rows: &[Vec<Option<V>>], delta: impl Fn(&V, &V) -> f64) -> Option<OracleAlpha> {
    let units: Vec<Vec<&V>> = rows
        .iter()
        .map(|row| row.iter().flatten().collect::<Vec<_>>())
        .filter(|vals| vals.len() >= 2)
        .collect();
    let pooled: Vec<&V> = units.iter().flatten().copied().collect();
    let n = pooled.len();
    if n == 0 {
        return None;
    }

    let mut observed = 0.0;
    for vals in &units {
        let m = vals.len() as f64;
        let mut within = 0.0;
        for i in 0..vals.len() {
            for j in 0..vals.len() {
                if i != j {
                    within += delta(vals[i], vals[j]);
                }
            }
        }
        observed += within / (m - 1.0);
    }
    let d_o = observed / n as f64;

    let mut expected = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                expected += delta(pooled[i], pooled[j]);
            }
        }
    }
    let d_e = expected / (n as f64 * (n as f64 - 1.0));
    let alpha = if d_e == 0.0 { 1.0 } else { 1.0 - d_o / d_e };
    Some(OracleAlpha { alpha, d_o, d_e, n })
}

/// MASI distance computed from its two factors over plain slices.
pub fn oracle_masi<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let a = dedup(a);
    let b = dedup(b);
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.len() - inter;
    let jaccard = inter as f64 / union as f64;
    let a_in_b = a.iter().all(|x| b.contains(x));
    let b_in_a = b.iter().all(|x| a.contains(x));
    let monotonicity = if a_in_b && b_in_a {
        1.0
    } else if a_in_b || b_in_a {
        2.0 / 3.0
    } else if inter > 0 {
        1.0 / 3.0
    } else {
        0.0
    };
    1.0 - jaccard * monotonicity
}

fn dedup<T: PartialEq>(items: &[T]) -> Vec<&T> {
    let mut out: Vec<&T> = Vec::new();
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// A random reliability table with 1–`max_annotators` annotators,
/// 1–`max_units` units and values drawn from `0..value_count`. About a
/// fifth of cells are missing.
pub fn random_table(
    rng: &mut impl Rng,
    max_annotators: usize,
    max_units: usize,
    value_count: u8,
) -> Vec<Vec<Option<u8>>> {
    let annotators = rng.random_range(1..=max_annotators);
    let units = rng.random_range(1..=max_units);
    (0..units)
        .map(|_| {
            (0..annotators)
                .map(|_| (!rng.random_bool(0.2)).then(|| rng.random_range(0..value_count)))
                .collect()
        })
        .collect()
}

/// A random table that has at least one pairable unit.
pub fn random_pairable_table(
    rng: &mut impl Rng,
    max_annotators: usize,
    max_units: usize,
    value_count: u8,
) -> Vec<Vec<Option<u8>>> {
    let max_annotators = max_annotators.max(2);
    loop {
        let t = random_table(rng, max_annotators, max_units, value_count);
        if t.iter().any(|row| row.iter().flatten().count() >= 2) {
            return t;
        }
    }
}

/// A random subset of `universe`, possibly empty.
pub fn random_label_set(rng: &mut impl Rng, universe: &[&str]) -> BTreeSet<String> {
    universe.iter().filter(|_| rng.random_bool(0.35)).map(|s| s.to_string()).collect()
}

/// Every `(harm_type, specific_harm)` pair of a taxonomy.
pub fn harm_paths(taxonomy: &Taxonomy) -> Vec<(String, String)> {
    taxonomy
        .harm_types
        .iter()
        .flat_map(|ht| ht.specific_harms.iter().map(move |sh| (ht.id.clone(), sh.id.clone())))
        .collect()
}

/// Fixed base time for generated timestamps.
pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 2, 1, 9, 0, 0).unwrap()
}

pub fn annotation(
    incident: &str,
    annotator: &str,
    round: &str,
    version: &str,
    selections: impl IntoIterator<Item = HarmSelection>,
) -> Annotation {
    Annotation {
        incident_id: incident.into(),
        annotator_id: annotator.into(),
        round_id: round.into(),
        selections: selections.into_iter().collect(),
        comment: None,
        submitted_at: epoch(),
        taxonomy_version: version.into(),
    }
}

/// Up to `max` distinct harms from `pool`, each with a random status.
pub fn random_selections(rng: &mut impl Rng, pool: &[(String, String)], max: usize) -> BTreeSet<HarmSelection> {
    let k = rng.random_range(0..=max.min(pool.len()));
    pool.choose_multiple(rng, k)
        .map(|(ht, sh)| HarmSelection::new(ht, sh, *HarmStatus::ALL.choose(rng).unwrap()))
        .collect()
}

/// Annotations of one incident by 1–`max_annotators` annotators, drawing
/// harms from a small random pool so selections overlap.
pub fn random_incident_annotations(
    rng: &mut impl Rng,
    taxonomy: &Taxonomy,
    incident: &str,
    round: &str,
    max_annotators: usize,
) -> Vec<Annotation> {
    let all = harm_paths(taxonomy);
    let pool: Vec<_> = all.choose_multiple(rng, 6).cloned().collect();
    let count = rng.random_range(1..=max_annotators);
    (0..count)
        .map(|a| annotation(incident, &format!("ann-{a}"), round, &taxonomy.version, random_selections(rng, &pool, 4)))
        .collect()
}

/// One synthetic round for [`trend_corpus`].
#[derive(Debug, Clone)]
pub struct SyntheticRound {
    pub label: String,
    pub annotations: Vec<Annotation>,
}

/// `rounds` rounds over `incidents` incidents and `annotators` annotators.
/// Each incident has a reference label set; in round `r` each annotator
/// deviates from it with probability falling linearly from 0.9 to 0.1, so
/// agreement rises round over round without becoming perfect.
pub fn trend_corpus(
    seed: u64,
    taxonomy: &Taxonomy,
    rounds: usize,
    incidents: &[String],
    annotators: usize,
) -> Vec<SyntheticRound> {
    let mut rng = rng(seed);
    let all = harm_paths(taxonomy);
    let reference: Vec<BTreeSet<HarmSelection>> = incidents
        .iter()
        .map(|_| {
            let k = rng.random_range(1..=3);
            all.choose_multiple(&mut rng, k)
                .map(|(ht, sh)| HarmSelection::new(ht, sh, *HarmStatus::ALL.choose(&mut rng).unwrap()))
                .collect()
        })
        .collect();

    (0..rounds)
        .map(|r| {
            let p_deviate = if rounds > 1 { 0.9 - 0.8 * r as f64 / (rounds - 1) as f64 } else { 0.1 };
            let label = format!("round-{}", r + 1);
            let mut annotations = Vec::new();
            for (incident, gold) in incidents.iter().zip(&reference) {
                for a in 0..annotators {
                    let selections = if rng.random_bool(p_deviate) { perturb(&mut rng, gold, &all) } else { gold.clone() };
                    let mut ann = annotation(incident, &format!("ann-{a}"), &label, &taxonomy.version, selections);
                    ann.submitted_at = epoch() + Duration::days(7 * r as i64);
                    annotations.push(ann);
                }
            }
            SyntheticRound { label, annotations }
        })
        .collect()
}

fn perturb(rng: &mut impl Rng, gold: &BTreeSet<HarmSelection>, all: &[(String, String)]) -> BTreeSet<HarmSelection> {
    let mut out: Vec<HarmSelection> = gold.iter().cloned().collect();
    out.shuffle(rng);
    if !out.is_empty() && rng.random_bool(0.5) {
        out.pop();
    }
    let (ht, sh) = all.choose(rng).unwrap();
    if !out.iter().any(|s| &s.harm_type_id == ht && &s.specific_harm_id == sh) {
        out.push(HarmSelection::new(ht, sh, *HarmStatus::ALL.choose(rng).unwrap()));
    }
    out.into_iter().collect()
}
