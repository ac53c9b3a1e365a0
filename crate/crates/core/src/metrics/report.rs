//! The fairness report and its stable JSON form.
//!
//! JSON is written from a `serde_json::Value`, whose maps are ordered, so
//! keys come out sorted and the bytes depend only on the content. Floats use
//! the shortest representation that round-trips.

use serde::{Deserialize, Serialize};

use super::histogram::{build_histograms, HistogramTable};
use super::similarity::SimilarityProfile;
use super::{population_std, RateSet};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::pairwise::PairEvaluation;

pub const STD_CONVENTION: &str = "population";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDigest {
    pub n: usize,
    pub d: usize,
    pub g: usize,
    pub m: usize,
    pub hash: String,
}

impl DatasetDigest {
    pub fn of(set: &EmbeddingSet) -> Self {
        Self {
            n: set.len(),
            d: set.dim(),
            g: set.num_identities(),
            m: set.num_attributes(),
            hash: set.content_hash(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSection {
    /// `None` for the degenerate `-inf` threshold.
    pub value: Option<f64>,
    pub target_fpr: f64,
    pub allowed_fp: u64,
    pub realized_fp: u64,
    pub total_neg: u64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallRates {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEntry {
    pub id: usize,
    pub name: String,
    pub atpr: Option<f64>,
    pub afpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub atpr_avg: Option<f64>,
    pub atpr_std: Option<f64>,
    pub afpr_avg: Option<f64>,
    pub afpr_std: Option<f64>,
    pub excluded_atpr: usize,
    pub excluded_afpr: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentitySummary {
    pub ifpr_std: Option<f64>,
    pub itpr_undefined_count: usize,
    pub ifpr_min: Option<f64>,
    pub ifpr_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityEntry {
    pub id: usize,
    pub name: String,
    pub attribute: usize,
    pub images: usize,
    pub itpr: Option<f64>,
    pub ifpr: Option<f64>,
    pub s_intra: f64,
    pub s_inter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedHistogram {
    /// `intra` or `inter`.
    pub kind: String,
    pub table: HistogramTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub k: usize,
    pub bins: usize,
    pub std_convention: String,
    pub seed: Option<u64>,
}

impl ReportConfig {
    pub fn new(k: usize, bins: usize, seed: Option<u64>) -> Self {
        Self {
            k,
            bins,
            std_convention: STD_CONVENTION.to_string(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub dataset: DatasetDigest,
    pub threshold: ThresholdSection,
    pub overall: OverallRates,
    pub attributes: Vec<AttributeEntry>,
    pub attribute_stats: AttributeStats,
    pub identities_summary: IdentitySummary,
    pub identities: Vec<IdentityEntry>,
    pub per_identity_csv_path: Option<String>,
    pub histograms: Vec<NamedHistogram>,
    pub warnings: Vec<String>,
    pub config: ReportConfig,
}

pub fn build_report(
    set: &EmbeddingSet,
    pairs: &PairEvaluation,
    similarity: &SimilarityProfile,
    config: ReportConfig,
) -> Result<FairnessReport> {
    let counts = &pairs.counts;
    let n = set.len() as u64;
    if counts.by_identity.len() != set.num_identities()
        || counts.by_attribute.len() != set.num_attributes()
    {
        return Err(Error::Consistency(
            "pair counts were accumulated for a different label layout".into(),
        ));
    }
    if counts.overall.total() != n * (n - 1) {
        return Err(Error::Consistency(format!(
            "pair counts cover {} ordered pairs, dataset has {}",
            counts.overall.total(),
            n * (n - 1)
        )));
    }
    if pairs.threshold.total_negatives != counts.overall.negatives()
        || pairs.threshold.realized_fp != counts.overall.fp
    {
        return Err(Error::Consistency(
            "threshold result does not match the pair counts".into(),
        ));
    }
    if similarity.intra.len() != set.num_identities() || similarity.inter.len() != set.num_identities() {
        return Err(Error::Consistency(
            "similarity profile belongs to a different identity set".into(),
        ));
    }
    if !counts.is_consistent() {
        return Err(Error::Consistency("per-group counts do not sum to overall".into()));
    }

    let rates = RateSet::from_counts(counts);
    let labels = set.labels();
    let mut warnings = Vec::new();
    if pairs.threshold.degenerate {
        warnings.push(format!(
            "target FPR {} admits every negative pair; threshold is -inf",
            pairs.threshold.target_fpr
        ));
    }
    for (t, (tpr, fpr)) in rates.attributes.atpr.iter().zip(&rates.attributes.afpr).enumerate() {
        if tpr.is_none() {
            warnings.push(format!(
                "attribute {} has no positive pairs; aTPR undefined and excluded",
                labels.attribute_name(t)
            ));
        }
        if fpr.is_none() {
            warnings.push(format!(
                "attribute {} has no negative pairs; aFPR undefined and excluded",
                labels.attribute_name(t)
            ));
        }
    }
    if rates.identities.itpr_undefined_count > 0 {
        warnings.push(format!(
            "{} single-image identities have undefined iTPR",
            rates.identities.itpr_undefined_count
        ));
    }

    let attributes = (0..set.num_attributes())
        .map(|t| AttributeEntry {
            id: t,
            name: labels.attribute_name(t).to_string(),
            atpr: rates.attributes.atpr[t],
            afpr: rates.attributes.afpr[t],
        })
        .collect();

    let identity_attr = set.identity_attributes();
    let images = set.identity_counts();
    let identities = (0..set.num_identities())
        .map(|k| IdentityEntry {
            id: k,
            name: labels.identity_name(k).to_string(),
            attribute: identity_attr[k] as usize,
            images: images[k],
            itpr: rates.identities.itpr[k],
            ifpr: rates.identities.ifpr[k],
            s_intra: similarity.intra[k],
            s_inter: similarity.inter[k],
        })
        .collect();

    let groups: Vec<usize> = identity_attr.iter().map(|&a| a as usize).collect();
    let histograms = vec![
        NamedHistogram {
            kind: "intra".into(),
            table: build_histograms(&similarity.intra, &groups, &labels.attributes, config.bins)?,
        },
        NamedHistogram {
            kind: "inter".into(),
            table: build_histograms(&similarity.inter, &groups, &labels.attributes, config.bins)?,
        },
    ];

    let th = &pairs.threshold;
    Ok(FairnessReport {
        dataset: DatasetDigest::of(set),
        threshold: ThresholdSection {
            value: th.threshold.is_finite().then_some(f64::from(th.threshold)),
            target_fpr: th.target_fpr,
            allowed_fp: th.allowed_fp,
            realized_fp: th.realized_fp,
            total_neg: th.total_negatives,
            degenerate: th.degenerate,
        },
        overall: OverallRates {
            tpr: rates.tpr,
            fpr: rates.fpr,
        },
        attributes,
        attribute_stats: AttributeStats {
            atpr_avg: rates.attributes.atpr_avg,
            atpr_std: rates.attributes.atpr_std,
            afpr_avg: rates.attributes.afpr_avg,
            afpr_std: rates.attributes.afpr_std,
            excluded_atpr: rates.attributes.excluded_tpr(),
            excluded_afpr: rates.attributes.excluded_fpr(),
        },
        identities_summary: IdentitySummary {
            ifpr_std: rates.identities.ifpr_std,
            itpr_undefined_count: rates.identities.itpr_undefined_count,
            ifpr_min: rates.identities.ifpr_min,
            ifpr_max: rates.identities.ifpr_max,
        },
        identities,
        per_identity_csv_path: None,
        histograms,
        warnings,
        config,
    })
}

fn std_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    population_std(&v).ok()
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

impl FairnessReport {
    /// Pretty JSON with sorted keys.
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let mut s = serde_json::to_string_pretty(&value)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Recomputes the stored stds from the embedded rate arrays.
    pub fn stds_consistent(&self, tol: f64) -> bool {
        close(std_of(self.attributes.iter().map(|a| a.atpr)), self.attribute_stats.atpr_std, tol)
            && close(std_of(self.attributes.iter().map(|a| a.afpr)), self.attribute_stats.afpr_std, tol)
            && close(std_of(self.identities.iter().map(|e| e.ifpr)), self.identities_summary.ifpr_std, tol)
    }

    /// Writes `identity,name,attribute,images,itpr,ifpr,s_intra,s_inter`.
    pub fn write_identity_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        use super::histogram::format_sig9;
        let opt = |v: Option<f64>| v.map(format_sig9).unwrap_or_default();
        writeln!(out, "identity,name,attribute,images,itpr,ifpr,s_intra,s_inter")?;
        for e in &self.identities {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.id,
                e.name,
                e.attribute,
                e.images,
                opt(e.itpr),
                opt(e.ifpr),
                format_sig9(e.s_intra),
                format_sig9(e.s_inter)
            )?;
        }
        Ok(())
    }
}
