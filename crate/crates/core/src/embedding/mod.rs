//! Embedding datasets: vectors with identity and attribute labels.
//!
//! Vectors are kept exactly as ingested (not pre-normalized). Identity
//! indices are densified on construction so per-identity accumulators can be
//! plain arrays; the external names live in [`LabelTable`].

mod io;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{export_csv, import_csv, load_dataset, save_dataset, FFEB_MAGIC, FFEB_VERSION};

/// External names for identity and attribute indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTable {
    pub identities: Vec<String>,
    pub attributes: Vec<String>,
}

impl LabelTable {
    pub fn identity_name(&self, k: usize) -> &str {
        &self.identities[k]
    }

    pub fn attribute_name(&self, t: usize) -> &str {
        &self.attributes[t]
    }

    fn check_unique(names: &[String], what: &str) -> Result<()> {
        let mut seen = HashSet::with_capacity(names.len());
        for name in names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate {what} name `{name}`")));
            }
        }
        Ok(())
    }
}

/// N embedding vectors of dimension d with dense identity labels in `[0, G)`
/// and attribute labels in `[0, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    vectors: Vec<f32>,
    identity: Vec<u32>,
    attribute: Vec<u16>,
    num_identities: usize,
    num_attributes: usize,
    labels: LabelTable,
}

impl EmbeddingSet {
    /// Builds and validates a set.
    ///
    /// `identity` may be sparse; it is re-densified by sorted value. When
    /// `labels.identities` is non-empty it must be indexed by the raw
    /// (pre-densification) identity values. Empty label lists get numeric
    /// default names.
    pub fn new(
        dim: usize,
        vectors: Vec<f32>,
        identity: Vec<u32>,
        attribute: Vec<u16>,
        num_attributes: usize,
        labels: LabelTable,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        let n = identity.len();
        if n == 0 {
            return Err(Error::Validation("dataset has no vectors".into()));
        }
        if vectors.len() != n * dim {
            return Err(Error::Validation(format!(
                "expected {} vector components for {n}x{dim}, got {}",
                n * dim,
                vectors.len()
            )));
        }
        if attribute.len() != n {
            return Err(Error::Validation(format!(
                "{n} identity labels but {} attribute labels",
                attribute.len()
            )));
        }
        if num_attributes == 0 {
            return Err(Error::Validation("at least one attribute is required".into()));
        }

        for (i, row) in vectors.chunks_exact(dim).enumerate() {
            if let Some(c) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "record {i}: component {c} is not finite"
                )));
            }
            if row.iter().all(|&x| x == 0.0) {
                return Err(Error::Validation(format!("record {i}: all-zero vector")));
            }
        }
        if let Some(i) = attribute.iter().position(|&a| a as usize >= num_attributes) {
            return Err(Error::Validation(format!(
                "record {i}: attribute {} out of range [0, {num_attributes})",
                attribute[i]
            )));
        }

        // Attribute must be constant per identity; check on raw ids so the
        // message names the id the caller knows.
        let mut attr_of: BTreeMap<u32, u16> = BTreeMap::new();
        for (&y, &a) in identity.iter().zip(&attribute) {
            match attr_of.get(&y) {
                Some(&prev) if prev != a => {
                    return Err(Error::Validation(format!("identity {y} spans attributes")));
                }
                Some(_) => {}
                None => {
                    attr_of.insert(y, a);
                }
            }
        }

        let raw_ids: Vec<u32> = attr_of.keys().copied().collect();
        let max_raw = *raw_ids.last().expect("non-empty") as usize;
        let identity_names = if labels.identities.is_empty() {
            raw_ids.iter().map(|v| v.to_string()).collect::<Vec<_>>()
        } else {
            if labels.identities.len() <= max_raw {
                return Err(Error::Validation(format!(
                    "label table names {} identities but identity {max_raw} is used",
                    labels.identities.len()
                )));
            }
            raw_ids
                .iter()
                .map(|&v| labels.identities[v as usize].clone())
                .collect()
        };
        let attribute_names = if labels.attributes.is_empty() {
            (0..num_attributes).map(|t| t.to_string()).collect::<Vec<_>>()
        } else if labels.attributes.len() != num_attributes {
            return Err(Error::Validation(format!(
                "label table names {} attributes, expected {num_attributes}",
                labels.attributes.len()
            )));
        } else {
            labels.attributes
        };
        LabelTable::check_unique(&identity_names, "identity")?;
        LabelTable::check_unique(&attribute_names, "attribute")?;

        let dense: BTreeMap<u32, u32> = raw_ids
            .iter()
            .enumerate()
            .map(|(k, &raw)| (raw, k as u32))
            .collect();
        let identity = if raw_ids.len() == max_raw + 1 {
            identity
        } else {
            identity.iter().map(|y| dense[y]).collect()
        };

        Ok(Self {
            dim,
            vectors,
            identity,
            attribute,
            num_identities: raw_ids.len(),
            num_attributes,
            labels: LabelTable {
                identities: identity_names,
                attributes: attribute_names,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.identity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identity.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_identities(&self) -> usize {
        self.num_identities
    }

    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn identities(&self) -> &[u32] {
        &self.identity
    }

    pub fn attributes(&self) -> &[u16] {
        &self.attribute
    }

    pub fn labels(&self) -> &LabelTable {
        &self.labels
    }

    /// Attribute of each identity.
    pub fn identity_attributes(&self) -> Vec<u16> {
        let mut out = vec![0u16; self.num_identities];
        for (&y, &a) in self.identity.iter().zip(&self.attribute) {
            out[y as usize] = a;
        }
        out
    }

    /// Images per identity.
    pub fn identity_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_identities];
        for &y in &self.identity {
            counts[y as usize] += 1;
        }
        counts
    }

    /// Checks the minimum shape for a pairwise fairness evaluation.
    pub fn require_evaluable(&self) -> Result<()> {
        if self.len() < 2 || self.num_identities < 2 {
            return Err(Error::Degenerate(format!(
                "fairness evaluation needs N >= 2 and G >= 2 (got N={}, G={})",
                self.len(),
                self.num_identities
            )));
        }
        Ok(())
    }

    /// SHA-256 over shape, vectors and labels, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in [
            self.len(),
            self.dim,
            self.num_identities,
            self.num_attributes,
        ] {
            h.update((v as u64).to_le_bytes());
        }
        for x in &self.vectors {
            h.update(x.to_le_bytes());
        }
        for y in &self.identity {
            h.update(y.to_le_bytes());
        }
        for a in &self.attribute {
            h.update(a.to_le_bytes());
        }
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }
}

/// Returns `v / ||v||`.
pub fn normalize(v: &[f32]) -> Result<Vec<f32>> {
    let norm = v
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Domain(format!(
            "cannot normalize a vector with norm {norm}"
        )));
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Per-identity arithmetic means (not re-normalized) and image counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanVectors {
    dim: usize,
    means: Vec<f64>,
    counts: Vec<usize>,
}

impl MeanVectors {
    pub fn from_parts(dim: usize, means: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if dim == 0 || means.len() != dim * counts.len() {
            return Err(Error::Domain("mean matrix shape mismatch".into()));
        }
        Ok(Self { dim, means, counts })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

pub fn mean_vectors(set: &EmbeddingSet) -> MeanVectors {
    let d = set.dim();
    let g = set.num_identities();
    let mut sums = vec![0.0f64; g * d];
    let mut counts = vec![0usize; g];
    for (row, &y) in set.rows().zip(set.identities()) {
        let y = y as usize;
        counts[y] += 1;
        for (acc, &x) in sums[y * d..(y + 1) * d].iter_mut().zip(row) {
            *acc += f64::from(x);
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        let count = n as f64;
        for acc in &mut sums[k * d..(k + 1) * d] {
            *acc /= count;
        }
    }
    MeanVectors {
        dim: d,
        means: sums,
        counts,
    }
}
