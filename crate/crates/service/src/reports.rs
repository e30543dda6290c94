//! Report bodies shared by the HTTP handlers and the CLI, so both emit the
//! same bytes for the same store state.

use harmlens::agreement::{Mode, StatusHandling};
use harmlens::report::{self, ExportFormat, Exportable};
use harmlens::{CiParams, Platform, PlatformError};
use serde::Deserialize;

/// Options of an agreement report. Bootstrap runs when `ci` is set.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct AgreementParams {
    pub mode: Mode,
    pub status: StatusHandling,
    pub ci: bool,
    pub resamples: Option<usize>,
    pub confidence: Option<f64>,
    pub seed: Option<u64>,
}

impl AgreementParams {
    fn ci_params(&self) -> Option<CiParams> {
        self.ci.then(|| {
            let d = CiParams::default();
            CiParams {
                resamples: self.resamples.unwrap_or(d.resamples),
                confidence: self.confidence.unwrap_or(d.confidence),
                seed: self.seed.unwrap_or(d.seed),
            }
        })
    }
}

pub fn agreement(p: &Platform, round_id: &str, params: &AgreementParams) -> Result<Vec<u8>, PlatformError> {
    let r = p.agreement(round_id, params.mode, params.status, params.ci_params())?;
    Ok(report::export(Exportable::Agreement(&r), ExportFormat::Json)?)
}

pub fn summary(p: &Platform, round_id: &str, format: ExportFormat) -> Result<Vec<u8>, PlatformError> {
    let s = p.summary(round_id)?;
    Ok(report::export(Exportable::Summary(&s), format)?)
}

pub fn sankey(p: &Platform, round_id: &str, incident_id: &str) -> Result<Vec<u8>, PlatformError> {
    let g = p.sankey(round_id, incident_id)?;
    Ok(report::export(Exportable::Sankey(&g), ExportFormat::Json)?)
}

/// Trend over the given rounds, or every closed round when none are given.
pub fn trend(p: &Platform, round_ids: &[String]) -> Result<Vec<u8>, PlatformError> {
    let t = if round_ids.is_empty() { p.trend()? } else { p.trend_for(round_ids)? };
    Ok(report::export(Exportable::Trend(&t), ExportFormat::Json)?)
}

/// Splits a comma-separated list, dropping empty items.
pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}
