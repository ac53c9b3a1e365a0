use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-group densities over shared bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramTable {
    pub edges: Vec<f64>,
    pub groups: Vec<GroupHistogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupHistogram {
    pub label: String,
    pub count: usize,
    /// Normalized so that `sum(density * width) == 1`; all zero when empty.
    pub density: Vec<f64>,
    pub empty: bool,
}

pub fn build_histograms(
    values: &[f64],
    groups: &[usize],
    labels: &[String],
    bins: usize,
) -> Result<HistogramTable> {
    if values.len() != groups.len() {
        return Err(Error::Domain(format!(
            "{} values but {} group labels",
            values.len(),
            groups.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= labels.len()) {
        return Err(Error::Domain(format!("group {g} has no label")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("histogram values must be finite".into()));
    }

    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() {
        (lo, hi) = (0.0, 1.0);
    } else if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();

    let mut counts = vec![vec![0u64; bins]; labels.len()];
    for (&v, &g) in values.iter().zip(groups) {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[g][b] += 1;
    }

    let groups = labels
        .iter()
        .zip(counts)
        .map(|(label, c)| {
            let total: u64 = c.iter().sum();
            let density = c
                .iter()
                .map(|&x| if total == 0 { 0.0 } else { x as f64 / (total as f64 * width) })
                .collect();
            GroupHistogram {
                label: label.clone(),
                count: total as usize,
                density,
                empty: total == 0,
            }
        })
        .collect();
    Ok(HistogramTable { edges, groups })
}

impl HistogramTable {
    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Mean of the group's values under the binned density (bin centres).
    pub fn binned_mean(&self, group: usize) -> Option<f64> {
        let g = &self.groups[group];
        if g.empty {
            return None;
        }
        Some(
            g.density
                .iter()
                .enumerate()
                .map(|(b, d)| {
                    let w = self.edges[b + 1] - self.edges[b];
                    d * w * 0.5 * (self.edges[b] + self.edges[b + 1])
                })
                .sum(),
        )
    }

    /// Writes `group,bin_lo,bin_hi,density` rows.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "group,bin_lo,bin_hi,density")?;
        for g in &self.groups {
            for (b, d) in g.density.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{}",
                    g.label,
                    format_sig9(self.edges[b]),
                    format_sig9(self.edges[b + 1]),
                    format_sig9(*d)
                )?;
            }
        }
        Ok(())
    }
}

/// Shortest decimal form of `x` rounded to 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return String::new();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("valid float");
    format!("{rounded}")
}
