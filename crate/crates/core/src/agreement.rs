//! Inter-annotator agreement: Krippendorff's alpha over a pluggable
//! distance, the MASI set distance, per-category agreement, and the
//! round-over-round trend.
//!
//! # Alpha
//!
//! Reliability data is a table of units (rows) by annotators (columns),
//! with missing cells allowed. For each unit `u` holding `m_u ≥ 2` values,
//! every ordered pair of values from distinct annotators adds `1/(m_u − 1)`
//! to the coincidence matrix `o[c][k]`. With marginals `n_c = Σ_k o[c][k]`
//! and `n = Σ_c n_c` (the number of pairable values):
//!
//! ```text
//! D_o = (1/n)        · Σ_{c,k} o[c][k] · δ(c,k)
//! D_e = (1/(n(n−1))) · Σ_{c,k} n_c · n_k · δ(c,k)
//! α   = 1 − D_o / D_e
//! ```
//!
//! When `D_e = 0` (a single distinct value across the whole data set) alpha
//! is formally undefined; it is reported as `1.0` with `degenerate = true`.
//! Units with fewer than two values are excluded and counted.
//!
//! # Multi-label annotations
//!
//! Annotations are sets of labels, so two modes are offered:
//!
//! * [`Mode::Set`]: one unit per incident, the value is the annotator's label
//!   set, compared with [`Masi`].
//! * [`Mode::Binary`]: one unit per (incident, specific harm), the value is
//!   `1` if the annotator selected that harm and `0` otherwise, compared with
//!   [`Nominal`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{Annotation, HarmSelection, HarmStatus};
use crate::taxonomy::Taxonomy;

pub type LabelSet = BTreeSet<String>;

/// A distance δ between two values. `δ(a, a)` must be `0`.
pub trait Distance<V: ?Sized> {
    fn name(&self) -> &str;
    fn distance(&self, a: &V, b: &V) -> f64;
}

/// `0` for equal values, `1` otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct Nominal;

impl<V: PartialEq + ?Sized> Distance<V> for Nominal {
    fn name(&self) -> &str {
        "nominal"
    }

    fn distance(&self, a: &V, b: &V) -> f64 {
        if a == b {
            0.0
        } else {
            1.0
        }
    }
}

/// MASI distance between label sets, see [`masi_distance`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Masi;

impl<L: Ord> Distance<BTreeSet<L>> for Masi {
    fn name(&self) -> &str {
        "masi"
    }

    fn distance(&self, a: &BTreeSet<L>, b: &BTreeSet<L>) -> f64 {
        masi_distance(a, b)
    }
}

/// Adapts a closure into a named [`Distance`].
pub struct FnDistance<F> {
    pub name: String,
    pub f: F,
}

impl<V: ?Sized, F: Fn(&V, &V) -> f64> Distance<V> for FnDistance<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn distance(&self, a: &V, b: &V) -> f64 {
        (self.f)(a, b)
    }
}

/// MASI distance: `1 − J·M`, where `J = |a∩b| / |a∪b|` (1 when both sets
/// are empty) and `M` is 1 for equal sets, 2/3 when one is a strict subset
/// of the other, 1/3 for a non-empty intersection otherwise, 0 when
/// disjoint.
///
/// ```
/// use std::collections::BTreeSet;
/// use harmlens::agreement::masi_distance;
///
/// let a: BTreeSet<_> = ["x"].into();
/// let b: BTreeSet<_> = ["x", "y"].into();
/// assert!((masi_distance(&a, &b) - 2.0 / 3.0).abs() < 1e-12);
/// ```
pub fn masi_distance<L: Ord>(a: &BTreeSet<L>, b: &BTreeSet<L>) -> f64 {
    let shared = a.intersection(b).count();
    let union = a.len() + b.len() - shared;
    if union == 0 {
        return 0.0;
    }
    let monotonicity = if shared == a.len() && shared == b.len() {
        1.0
    } else if shared == a.len() || shared == b.len() {
        2.0 / 3.0
    } else if shared > 0 {
        1.0 / 3.0
    } else {
        0.0
    };
    1.0 - (shared as f64 / union as f64) * monotonicity
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Set,
    Binary,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Set => "set",
            Mode::Binary => "binary",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "set" => Ok(Mode::Set),
            "binary" => Ok(Mode::Binary),
            other => Err(format!("unknown mode {other:?} (expected set or binary)")),
        }
    }
}

/// Whether actual/potential status is part of the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusHandling {
    #[default]
    Ignore,
    Distinguish,
}

impl FromStr for StatusHandling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ignore" => Ok(StatusHandling::Ignore),
            "distinguish" => Ok(StatusHandling::Distinguish),
            other => Err(format!("unknown status handling {other:?} (expected ignore or distinguish)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgreementError {
    #[error("no annotations to compare")]
    EmptyInput,
    #[error("unit {0:?} has no values")]
    EmptyUnit(String),
    #[error("annotations span more than one round")]
    MixedRounds,
    #[error("no unit has values from two or more annotators")]
    NoPairableUnits,
    #[error("agreement needs at least two annotators, found {0}")]
    FewerThanTwoAnnotators(usize),
    #[error("expected disagreement is zero; every value is identical")]
    Degenerate,
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("confidence must lie strictly between 0 and 1, got {0}")]
    InvalidConfidence(f64),
    #[error("round {0:?} is still open")]
    OpenRound(String),
}

impl AgreementError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptyInput => "EMPTY_INPUT",
            Self::EmptyUnit(_) => "EMPTY_UNIT",
            Self::MixedRounds => "MIXED_ROUNDS",
            Self::NoPairableUnits => "NO_PAIRABLE_UNITS",
            Self::FewerThanTwoAnnotators(_) => "FEWER_THAN_TWO_ANNOTATORS",
            Self::Degenerate => "DEGENERATE",
            Self::TooFewResamples(_) => "TOO_FEW_RESAMPLES",
            Self::InvalidConfidence(_) => "INVALID_CONFIDENCE",
            Self::OpenRound(_) => "ROUND_OPEN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit<V> {
    pub id: String,
    /// annotator id → value
    pub values: BTreeMap<String, V>,
}

impl<V> Unit<V> {
    pub fn is_pairable(&self) -> bool {
        self.values.len() >= 2
    }
}

/// Units-by-annotators value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityData<V> {
    pub mode: Mode,
    pub units: Vec<Unit<V>>,
}

impl<V> ReliabilityData<V> {
    pub fn new(mode: Mode, units: Vec<Unit<V>>) -> Result<Self, AgreementError> {
        if let Some(empty) = units.iter().find(|u| u.values.is_empty()) {
            return Err(AgreementError::EmptyUnit(empty.id.clone()));
        }
        Ok(Self { mode, units })
    }

    /// Builds data from rows of optional values, one column per annotator.
    /// Annotators are named `a0, a1, …` and units `u0, u1, …`; rows where
    /// every cell is `None` are dropped.
    ///
    /// ```
    /// use harmlens::agreement::{krippendorff_alpha, Mode, Nominal, ReliabilityData};
    ///
    /// let data = ReliabilityData::from_rows(Mode::Binary, vec![
    ///     vec![Some('a'), Some('a')],
    ///     vec![Some('a'), Some('b')],
    /// ]);
    /// let report = krippendorff_alpha(&data, &Nominal).unwrap();
    /// assert_eq!((report.d_o, report.d_e, report.alpha), (0.5, 0.5, 0.0));
    /// ```
    pub fn from_rows(mode: Mode, rows: Vec<Vec<Option<V>>>) -> Self {
        let units = rows
            .into_iter()
            .enumerate()
            .map(|(u, row)| Unit {
                id: format!("u{u}"),
                values: row
                    .into_iter()
                    .enumerate()
                    .filter_map(|(a, v)| v.map(|v| (format!("a{a}"), v)))
                    .collect(),
            })
            .filter(|u| !u.values.is_empty())
            .collect();
        Self { mode, units }
    }

    pub fn pairable_units(&self) -> impl Iterator<Item = &Unit<V>> + Clone {
        self.units.iter().filter(|u| u.is_pairable())
    }

    pub fn excluded_units(&self) -> usize {
        self.units.iter().filter(|u| !u.is_pairable()).count()
    }

    pub fn annotators(&self) -> BTreeSet<&str> {
        self.units.iter().flat_map(|u| u.values.keys().map(String::as_str)).collect()
    }
}

/// Coincidence matrix over the distinct values of the pairable units.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceAccumulator<V> {
    /// Distinct values in ascending order; indexes `matrix` and `marginals`.
    pub values: Vec<V>,
    pub matrix: Vec<Vec<f64>>,
    pub marginals: Vec<f64>,
    /// Number of pairable values, `n`.
    pub total: f64,
}

/// Per-value counts of one unit, as (value index, count).
fn unit_counts<V: Ord>(unit: &Unit<V>, index: &BTreeMap<&V, usize>) -> Vec<(usize, f64)> {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for v in unit.values.values() {
        *counts.entry(index[v]).or_default() += 1.0;
    }
    counts.into_iter().collect()
}

impl<V: Ord + Clone> CoincidenceAccumulator<V> {
    pub fn from_data(data: &ReliabilityData<V>) -> Self {
        Self::from_units(data.pairable_units())
    }

    /// Accumulates the given units; units with fewer than two values are skipped.
    pub fn from_units<'a>(units: impl IntoIterator<Item = &'a Unit<V>> + Clone) -> Self
    where
        V: 'a,
    {
        let distinct: BTreeSet<&V> =
            units.clone().into_iter().filter(|u| u.is_pairable()).flat_map(|u| u.values.values()).collect();
        let index: BTreeMap<&V, usize> = distinct.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let size = distinct.len();
        let mut matrix = vec![vec![0.0; size]; size];
        for unit in units.into_iter().filter(|u| u.is_pairable()) {
            let weight = 1.0 / (unit.values.len() as f64 - 1.0);
            let counts = unit_counts(unit, &index);
            for &(c, n_c) in &counts {
                for &(k, n_k) in &counts {
                    let pairs = if c == k { n_c * (n_k - 1.0) } else { n_c * n_k };
                    matrix[c][k] += pairs * weight;
                }
            }
        }
        let marginals: Vec<f64> = matrix.iter().map(|row| row.iter().sum()).collect();
        let total = marginals.iter().sum();
        Self { values: distinct.into_iter().cloned().collect(), matrix, marginals, total }
    }

    fn distances(&self, distance: &dyn Distance<V>) -> Vec<Vec<f64>> {
        self.values.iter().map(|a| self.values.iter().map(|b| distance.distance(a, b)).collect()).collect()
    }

    pub fn observed_disagreement(&self, distance: &dyn Distance<V>) -> f64 {
        observed(&self.matrix, self.total, &self.distances(distance))
    }

    pub fn expected_disagreement(&self, distance: &dyn Distance<V>) -> f64 {
        expected(&self.marginals, self.total, &self.distances(distance))
    }
}

fn observed(matrix: &[Vec<f64>], total: f64, delta: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for (row, drow) in matrix.iter().zip(delta) {
        for (o, d) in row.iter().zip(drow) {
            sum += o * d;
        }
    }
    sum / total
}

fn expected(marginals: &[f64], total: f64, delta: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for (n_c, drow) in marginals.iter().zip(delta) {
        for (n_k, d) in marginals.iter().zip(drow) {
            sum += n_c * n_k * d;
        }
    }
    sum / (total * (total - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub low: f64,
    pub high: f64,
    pub confidence: f64,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub alpha: f64,
    pub d_o: f64,
    pub d_e: f64,
    /// Number of pairable values.
    pub n: usize,
    pub mode: Mode,
    pub distance: String,
    pub excluded_units: usize,
    pub degenerate: bool,
    pub ci: Option<ConfidenceInterval>,
}

/// Krippendorff's alpha for `data` under `distance`.
pub fn krippendorff_alpha<V: Ord + Clone>(
    data: &ReliabilityData<V>,
    distance: &dyn Distance<V>,
) -> Result<AgreementReport, AgreementError> {
    let acc = CoincidenceAccumulator::from_data(data);
    if acc.total == 0.0 {
        return Err(AgreementError::NoPairableUnits);
    }
    let delta = acc.distances(distance);
    let d_o = observed(&acc.matrix, acc.total, &delta);
    let d_e = expected(&acc.marginals, acc.total, &delta);
    let degenerate = d_e == 0.0;
    Ok(AgreementReport {
        alpha: if degenerate { 1.0 } else { 1.0 - d_o / d_e },
        d_o,
        d_e,
        n: acc.total.round() as usize,
        mode: data.mode,
        distance: distance.name().to_string(),
        excluded_units: data.excluded_units(),
        degenerate,
        ci: None,
    })
}

/// Percentile bootstrap interval for alpha, resampling pairable units with
/// replacement. Resamples whose expected disagreement is zero count as
/// alpha `1`. Deterministic for a given `seed`.
pub fn bootstrap_ci<V: Ord + Clone>(
    data: &ReliabilityData<V>,
    distance: &dyn Distance<V>,
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<ConfidenceInterval, AgreementError> {
    if resamples < 100 {
        return Err(AgreementError::TooFewResamples(resamples));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(AgreementError::InvalidConfidence(confidence));
    }
    let point = krippendorff_alpha(data, distance)?;
    if point.degenerate {
        return Err(AgreementError::Degenerate);
    }

    let acc = CoincidenceAccumulator::from_data(data);
    let delta = acc.distances(distance);
    let index: BTreeMap<&V, usize> = acc.values.iter().enumerate().map(|(i, v)| (v, i)).collect();
    // Each unit's contribution to the coincidence matrix, kept sparse.
    let contributions: Vec<Vec<(usize, usize, f64)>> = data
        .pairable_units()
        .map(|unit| {
            let weight = 1.0 / (unit.values.len() as f64 - 1.0);
            let counts = unit_counts(unit, &index);
            let mut cells = Vec::new();
            for &(c, n_c) in &counts {
                for &(k, n_k) in &counts {
                    let pairs = if c == k { n_c * (n_k - 1.0) } else { n_c * n_k };
                    if pairs > 0.0 {
                        cells.push((c, k, pairs * weight));
                    }
                }
            }
            cells
        })
        .collect();

    let size = acc.values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alphas = Vec::with_capacity(resamples);
    let mut matrix = vec![vec![0.0; size]; size];
    for _ in 0..resamples {
        matrix.iter_mut().for_each(|row| row.iter_mut().for_each(|x| *x = 0.0));
        for _ in 0..contributions.len() {
            for &(c, k, w) in &contributions[rng.random_range(0..contributions.len())] {
                matrix[c][k] += w;
            }
        }
        let marginals: Vec<f64> = matrix.iter().map(|row| row.iter().sum()).collect();
        let total: f64 = marginals.iter().sum();
        let d_e = expected(&marginals, total, &delta);
        alphas.push(if d_e == 0.0 { 1.0 } else { 1.0 - observed(&matrix, total, &delta) / d_e });
    }
    alphas.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    Ok(ConfidenceInterval {
        low: quantile(&alphas, tail),
        high: quantile(&alphas, 1.0 - tail),
        confidence,
        resamples,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

// ---------------------------------------------------------------------------
// From annotations

/// Reliability data in one of the two modes.
#[derive(Debug, Clone, PartialEq)]
pub enum Reliability {
    Set(ReliabilityData<LabelSet>),
    Binary(ReliabilityData<u8>),
}

impl Reliability {
    pub fn alpha(&self) -> Result<AgreementReport, AgreementError> {
        match self {
            Reliability::Set(d) => krippendorff_alpha(d, &Masi),
            Reliability::Binary(d) => krippendorff_alpha(d, &Nominal),
        }
    }

    pub fn bootstrap(&self, resamples: usize, confidence: f64, seed: u64) -> Result<ConfidenceInterval, AgreementError> {
        match self {
            Reliability::Set(d) => bootstrap_ci(d, &Masi, resamples, confidence, seed),
            Reliability::Binary(d) => bootstrap_ci(d, &Nominal, resamples, confidence, seed),
        }
    }

    pub fn unit_count(&self) -> usize {
        match self {
            Reliability::Set(d) => d.units.len(),
            Reliability::Binary(d) => d.units.len(),
        }
    }
}

/// One annotator's selected paths for an incident.
type Picked<'a> = (&'a str, BTreeSet<String>);

/// Label of a selection: `harm_type/specific_harm`, with `:status`
/// appended when status is distinguished.
pub fn selection_label(selection: &HarmSelection, status: StatusHandling) -> String {
    match status {
        StatusHandling::Ignore => selection.path(),
        StatusHandling::Distinguish => format!("{}:{}", selection.path(), selection.status),
    }
}

fn check_single_round(annotations: &[&Annotation]) -> Result<(), AgreementError> {
    let first = annotations.first().ok_or(AgreementError::EmptyInput)?;
    if annotations.iter().any(|a| a.round_id != first.round_id) {
        return Err(AgreementError::MixedRounds);
    }
    Ok(())
}

fn by_incident<'a>(annotations: &[&'a Annotation]) -> BTreeMap<&'a str, Vec<&'a Annotation>> {
    let mut out: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
    for a in annotations {
        out.entry(a.incident_id.as_str()).or_default().push(a);
    }
    out
}

/// Set-mode data: one unit per annotated incident, valued by label set.
pub fn set_reliability(
    annotations: &[&Annotation],
    status: StatusHandling,
) -> Result<ReliabilityData<LabelSet>, AgreementError> {
    check_single_round(annotations)?;
    let units = by_incident(annotations)
        .into_iter()
        .map(|(incident, anns)| Unit {
            id: incident.to_string(),
            values: anns
                .iter()
                .map(|a| (a.annotator_id.clone(), a.selections.iter().map(|s| selection_label(s, status)).collect()))
                .collect(),
        })
        .collect();
    ReliabilityData::new(Mode::Set, units)
}

/// Builds reliability data from one round's annotations.
///
/// Set mode yields one unit per annotated incident. Binary mode yields one
/// unit per (incident, specific harm of `taxonomy`), or per (incident,
/// specific harm, status) when status is distinguished.
pub fn build_reliability(
    annotations: &[&Annotation],
    taxonomy: &Taxonomy,
    mode: Mode,
    status: StatusHandling,
) -> Result<Reliability, AgreementError> {
    check_single_round(annotations)?;
    match mode {
        Mode::Set => Ok(Reliability::Set(set_reliability(annotations, status)?)),
        Mode::Binary => {
            let statuses: Vec<Option<HarmStatus>> = match status {
                StatusHandling::Ignore => vec![None],
                StatusHandling::Distinguish => HarmStatus::ALL.iter().copied().map(Some).collect(),
            };
            let mut units = Vec::new();
            for (incident, anns) in by_incident(annotations) {
                let chosen: Vec<BTreeSet<(String, HarmStatus)>> = anns
                    .iter()
                    .map(|a| a.selections.iter().map(|s| (s.path(), s.status)).collect())
                    .collect();
                for harm in taxonomy.specific_harms() {
                    let path = harm.path();
                    for st in &statuses {
                        let values = anns
                            .iter()
                            .zip(&chosen)
                            .map(|(a, picked)| {
                                let hit = match st {
                                    None => HarmStatus::ALL.iter().any(|s| picked.contains(&(path.clone(), *s))),
                                    Some(s) => picked.contains(&(path.clone(), *s)),
                                };
                                (a.annotator_id.clone(), u8::from(hit))
                            })
                            .collect();
                        let id = match st {
                            None => format!("{incident}/{path}"),
                            Some(s) => format!("{incident}/{path}:{s}"),
                        };
                        units.push(Unit { id, values });
                    }
                }
            }
            Ok(Reliability::Binary(ReliabilityData::new(Mode::Binary, units)?))
        }
    }
}

/// Alpha per selected specific harm, in binary mode with nominal distance.
/// Units are the annotated incidents; harms nobody selected are omitted.
pub fn per_category_agreement(annotations: &[&Annotation]) -> Result<BTreeMap<String, AgreementReport>, AgreementError> {
    check_single_round(annotations)?;
    let annotators: BTreeSet<&str> = annotations.iter().map(|a| a.annotator_id.as_str()).collect();
    if annotators.len() < 2 {
        return Err(AgreementError::FewerThanTwoAnnotators(annotators.len()));
    }
    let selected: BTreeSet<String> = annotations.iter().flat_map(|a| a.selections.iter().map(|s| s.path())).collect();
    let incidents = by_incident(annotations);
    let picked: Vec<(&str, Vec<Picked<'_>>)> = incidents
        .iter()
        .map(|(incident, anns)| {
            let per = anns
                .iter()
                .map(|a| (a.annotator_id.as_str(), a.selections.iter().map(|s| s.path()).collect()))
                .collect();
            (*incident, per)
        })
        .collect();

    let mut out = BTreeMap::new();
    for path in selected {
        let units = picked
            .iter()
            .map(|(incident, per)| Unit {
                id: incident.to_string(),
                values: per.iter().map(|(who, paths)| (who.to_string(), u8::from(paths.contains(&path)))).collect(),
            })
            .collect();
        let report = krippendorff_alpha(&ReliabilityData::new(Mode::Binary, units)?, &Nominal)?;
        out.insert(path, report);
    }
    Ok(out)
}

/// One unit's share of a data set's alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitAgreement {
    pub unit: String,
    /// `None` when the unit has fewer than two values or the data set has
    /// no pairable unit at all.
    pub alpha: Option<f64>,
    pub d_o: Option<f64>,
    pub d_e: Option<f64>,
    pub annotators: usize,
    pub degenerate: bool,
}

/// Per-unit alpha: `1 − D_o(u) / D_e`, where `D_o(u)` is the mean pairwise
/// distance within unit `u` and `D_e` is the data set's expected
/// disagreement. The data set's alpha is the `m_u/n`-weighted mean of
/// these values.
///
/// A lone unit's own alpha is `0` whenever it shows any disagreement, so
/// expected disagreement is pooled across units to keep the score graded.
pub fn unit_alphas<V: Ord + Clone>(data: &ReliabilityData<V>, distance: &dyn Distance<V>) -> Vec<UnitAgreement> {
    let acc = CoincidenceAccumulator::from_data(data);
    let d_e = (acc.total > 0.0).then(|| acc.expected_disagreement(distance));
    data.units
        .iter()
        .map(|unit| {
            let m = unit.values.len();
            let (alpha, d_o) = match d_e {
                Some(d_e) if m >= 2 => {
                    let values: Vec<&V> = unit.values.values().collect();
                    let mut sum = 0.0;
                    for (i, a) in values.iter().enumerate() {
                        for (j, b) in values.iter().enumerate() {
                            if i != j {
                                sum += distance.distance(a, b);
                            }
                        }
                    }
                    let d_o = sum / (m * (m - 1)) as f64;
                    let alpha = if d_e == 0.0 { 1.0 } else { 1.0 - d_o / d_e };
                    (Some(alpha), Some(d_o))
                }
                _ => (None, None),
            };
            UnitAgreement {
                unit: unit.id.clone(),
                alpha,
                d_o,
                d_e: if m >= 2 { d_e } else { None },
                annotators: m,
                degenerate: alpha.is_some() && d_e == Some(0.0),
            }
        })
        .collect()
}

/// Set-mode (MASI) alpha of each annotated incident in a round.
pub fn incident_alphas(annotations: &[&Annotation], status: StatusHandling) -> Result<Vec<UnitAgreement>, AgreementError> {
    Ok(unit_alphas(&set_reliability(annotations, status)?, &Masi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub round: String,
    /// Mean per-incident alpha; `None` when no incident had two annotations.
    pub mean_alpha: Option<f64>,
    /// Incidents that contributed to the mean.
    pub incidents: usize,
    /// Incidents skipped for having fewer than two annotations.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub points: Vec<TrendPoint>,
}

/// A round's per-incident alphas, as input to [`round_trend`].
#[derive(Debug, Clone)]
pub struct RoundAlphas {
    pub label: String,
    pub closed: bool,
    pub incidents: Vec<UnitAgreement>,
}

/// Mean per-incident alpha per round. Rounds must be given in
/// chronological order and be closed.
pub fn round_trend(rounds: &[RoundAlphas]) -> Result<TrendSeries, AgreementError> {
    if let Some(open) = rounds.iter().find(|r| !r.closed) {
        return Err(AgreementError::OpenRound(open.label.clone()));
    }
    let points = rounds
        .iter()
        .map(|r| {
            let scored: Vec<f64> = r.incidents.iter().filter_map(|u| u.alpha).collect();
            TrendPoint {
                round: r.label.clone(),
                mean_alpha: (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64),
                incidents: scored.len(),
                excluded: r.incidents.len() - scored.len(),
            }
        })
        .collect();
    Ok(TrendSeries { points })
}
