//! Rates and fairness statistics derived from pair confusion counts.
//!
//! Attribute rates restrict the ordered pairs to those whose first element
//! carries the attribute, so cross-attribute pairs count for the first
//! element's group. Identity rates restrict by the first element's identity.
//! Every "std" is the population standard deviation. Undefined rates (empty
//! denominators) are reported as `None` and left out of aggregates.

mod histogram;
mod report;
mod similarity;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairwise::PairStatsAccumulator;

pub use histogram::{build_histograms, format_sig9, GroupHistogram, HistogramTable};
pub use report::{
    build_report, AttributeEntry, AttributeStats, DatasetDigest, FairnessReport, IdentityEntry,
    IdentitySummary, NamedHistogram, OverallRates, ReportConfig, ThresholdSection,
    STD_CONVENTION,
};
pub use similarity::{intra_inter_similarity, SimilarityProfile};

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("mean of an empty array".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Square root of the mean squared deviation (divisor = count).
pub fn population_std(values: &[f64]) -> Result<f64> {
    let mu = mean(values)?;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
    Ok(var.sqrt())
}

fn defined(values: &[Option<f64>]) -> Vec<f64> {
    values.iter().flatten().copied().collect()
}

fn avg_std(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let v = defined(values);
    (mean(&v).ok(), population_std(&v).ok())
}

pub fn overall_rates(acc: &PairStatsAccumulator) -> (Option<f64>, Option<f64>) {
    (acc.overall.tpr(), acc.overall.fpr())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRates {
    pub atpr: Vec<Option<f64>>,
    pub afpr: Vec<Option<f64>>,
    pub atpr_avg: Option<f64>,
    pub atpr_std: Option<f64>,
    pub afpr_avg: Option<f64>,
    pub afpr_std: Option<f64>,
}

impl AttributeRates {
    pub fn excluded_tpr(&self) -> usize {
        self.atpr.iter().filter(|r| r.is_none()).count()
    }

    pub fn excluded_fpr(&self) -> usize {
        self.afpr.iter().filter(|r| r.is_none()).count()
    }
}

pub fn attribute_rates(acc: &PairStatsAccumulator) -> AttributeRates {
    let atpr: Vec<_> = acc.by_attribute.iter().map(|c| c.tpr()).collect();
    let afpr: Vec<_> = acc.by_attribute.iter().map(|c| c.fpr()).collect();
    let (atpr_avg, atpr_std) = avg_std(&atpr);
    let (afpr_avg, afpr_std) = avg_std(&afpr);
    AttributeRates {
        atpr,
        afpr,
        atpr_avg,
        atpr_std,
        afpr_avg,
        afpr_std,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRates {
    pub itpr: Vec<Option<f64>>,
    pub ifpr: Vec<Option<f64>>,
    /// Std over all defined iFPR values, regardless of attribute.
    pub ifpr_std: Option<f64>,
    pub itpr_undefined_count: usize,
    pub ifpr_min: Option<f64>,
    pub ifpr_max: Option<f64>,
}

pub fn identity_rates(acc: &PairStatsAccumulator) -> IdentityRates {
    let itpr: Vec<_> = acc.by_identity.iter().map(|c| c.tpr()).collect();
    let ifpr: Vec<_> = acc.by_identity.iter().map(|c| c.fpr()).collect();
    let defined_fpr = defined(&ifpr);
    IdentityRates {
        itpr_undefined_count: itpr.iter().filter(|r| r.is_none()).count(),
        ifpr_std: population_std(&defined_fpr).ok(),
        ifpr_min: defined_fpr.iter().copied().reduce(f64::min),
        ifpr_max: defined_fpr.iter().copied().reduce(f64::max),
        itpr,
        ifpr,
    }
}

/// Overall, per-attribute and per-identity rates of one accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub attributes: AttributeRates,
    pub identities: IdentityRates,
}

impl RateSet {
    pub fn from_counts(acc: &PairStatsAccumulator) -> Self {
        let (tpr, fpr) = overall_rates(acc);
        Self {
            tpr,
            fpr,
            attributes: attribute_rates(acc),
            identities: identity_rates(acc),
        }
    }
}
