//! Synthetic embedding populations with a controllable group bias.
//!
//! Every image is `f = r + b + n`: `r` a random unit contour centre per
//! identity, `b = concentration * u_g` a fixed direction per group scaled by
//! the group's concentration, and `n` isotropic Gaussian noise with total
//! scale `intra_scale` (per-coordinate std `intra_scale / sqrt(d)`). A larger
//! concentration packs the group's identity centres closer together, which
//! raises inter-identity similarity and false positives for that group.

mod null;
mod rng;
mod split;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSet, LabelTable};
use crate::error::{Error, Result};
use crate::kv::KvFile;

pub use null::{
    afpr_std_permutation_test, ifpr_group_permutation_test, zero_bias_ifpr_std_bound,
    PermutationTest,
};
pub use rng::{draw_u64, seeded_rng, SeededStream};
pub use split::{epoch_order, gen_training_set, Partition, TrainingSet};

pub(crate) use rng::{
    STREAM_CENTERS, STREAM_GRAD_CHECK, STREAM_GROUP_DIRECTIONS, STREAM_INIT, STREAM_NOISE_BASE,
    STREAM_PAIRING, STREAM_SHUFFLE, STREAM_SPLIT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub identities: usize,
    /// Pull of identity centres toward the group direction (> 0).
    pub concentration: f64,
    /// Total std of per-image noise (>= 0).
    pub intra_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProfile {
    pub dim: usize,
    pub images_per_identity: usize,
    pub groups: Vec<GroupSpec>,
}

impl BiasProfile {
    /// `groups` identical groups: the zero-bias reference population.
    pub fn uniform(
        groups: usize,
        identities_per_group: usize,
        images_per_identity: usize,
        dim: usize,
        concentration: f64,
        intra_scale: f64,
    ) -> Self {
        Self {
            dim,
            images_per_identity,
            groups: (0..groups)
                .map(|g| GroupSpec {
                    name: format!("group{g}"),
                    identities: identities_per_group,
                    concentration,
                    intra_scale,
                })
                .collect(),
        }
    }

    /// Two groups of 32 identities with 20 images each; the second group's
    /// concentration is double the first's. The noise level keeps
    /// verification of the trained toy model away from saturation.
    pub fn standard_biased(dim: usize) -> Self {
        let mut p = Self::uniform(2, 32, 20, dim, 0.5, 0.8);
        p.groups[1].concentration = 1.0;
        p
    }

    /// Reads `dim`, `images_per_identity`, `groups` and
    /// `group.<g>.{name,identities,concentration,intra_scale}`.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let dim = kv.require("dim")?;
        let images_per_identity = kv.require("images_per_identity")?;
        let count: usize = kv.require("groups")?;
        let mut groups = Vec::with_capacity(count);
        for g in 0..count {
            let key = |field: &str| format!("group.{g}.{field}");
            groups.push(GroupSpec {
                name: kv
                    .get_str(&key("name"))
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("group{g}")),
                identities: kv.require(&key("identities"))?,
                concentration: kv.require(&key("concentration"))?,
                intra_scale: kv.get_or(&key("intra_scale"), 0.0)?,
            });
        }
        let profile = Self {
            dim,
            images_per_identity,
            groups,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.set("dim", self.dim);
        kv.set("images_per_identity", self.images_per_identity);
        kv.set("groups", self.groups.len());
        for (g, spec) in self.groups.iter().enumerate() {
            kv.set(format!("group.{g}.name"), &spec.name);
            kv.set(format!("group.{g}.identities"), spec.identities);
            kv.set(format!("group.{g}.concentration"), spec.concentration);
            kv.set(format!("group.{g}.intra_scale"), spec.intra_scale);
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("profile dimension must be positive".into()));
        }
        if self.images_per_identity == 0 {
            return Err(Error::Config("images_per_identity must be positive".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::Config("profile needs at least one group".into()));
        }
        if self.groups.len() > usize::from(u16::MAX) {
            return Err(Error::Config("too many groups".into()));
        }
        for (g, spec) in self.groups.iter().enumerate() {
            if !(spec.concentration.is_finite() && spec.concentration > 0.0) {
                return Err(Error::Config(format!(
                    "group {g}: concentration must be finite and positive"
                )));
            }
            if !(spec.intra_scale.is_finite() && spec.intra_scale >= 0.0) {
                return Err(Error::Config(format!(
                    "group {g}: intra_scale must be finite and non-negative"
                )));
            }
            if self.groups[..g].iter().any(|o| o.name == spec.name) {
                return Err(Error::Config(format!("duplicate group name `{}`", spec.name)));
            }
        }
        if self.num_identities() == 0 {
            return Err(Error::Config("profile has zero identities".into()));
        }
        if self.num_identities() > u32::MAX as usize {
            return Err(Error::Config("too many identities".into()));
        }
        Ok(())
    }

    pub fn num_identities(&self) -> usize {
        self.groups.iter().map(|g| g.identities).sum()
    }

    pub fn num_images(&self) -> usize {
        self.num_identities() * self.images_per_identity
    }

    /// Group of each identity, identities numbered group by group.
    pub fn identity_groups(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, spec)| std::iter::repeat_n(g, spec.identities))
            .collect()
    }
}

/// Everything needed to re-derive a generated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub seed: u64,
    pub profile: BiasProfile,
    /// Unit direction `u_g` per group.
    pub group_directions: Vec<Vec<f64>>,
    /// Unit contour centre `r_k` per identity.
    pub contour_centers: Vec<Vec<f64>>,
    pub identity_group: Vec<usize>,
    /// Groups ordered by expected mean inter-identity similarity, lowest
    /// first (ascending concentration; ties keep group order).
    pub expected_inter_order: Vec<usize>,
}

impl SynthTruth {
    /// Group bias vector `b_g = concentration * u_g`.
    pub fn group_bias(&self, g: usize) -> Vec<f64> {
        let kappa = self.profile.groups[g].concentration;
        self.group_directions[g].iter().map(|u| kappa * u).collect()
    }

    /// Identity centre `r_k + b_g`.
    pub fn center(&self, k: usize) -> Vec<f64> {
        let g = self.identity_group[k];
        let kappa = self.profile.groups[g].concentration;
        self.contour_centers[k]
            .iter()
            .zip(&self.group_directions[g])
            .map(|(r, u)| r + kappa * u)
            .collect()
    }

    /// Noise vector drawn for `image`, regenerated from its stream.
    pub fn noise(&self, image: usize) -> Vec<f64> {
        let k = image / self.profile.images_per_identity;
        let scale = self.profile.groups[self.identity_group[k]].intra_scale;
        image_noise(self.seed, image, self.profile.dim, scale)
    }

    /// Stored vector of `image`, recomputed from the truth.
    pub fn image(&self, image: usize) -> Vec<f32> {
        let k = image / self.profile.images_per_identity;
        compose(&self.center(k), &self.noise(image))
    }
}

fn gaussian_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vector(rng, dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn image_noise(seed: u64, image: usize, dim: usize, scale: f64) -> Vec<f64> {
    let mut rng = seeded_rng(seed, STREAM_NOISE_BASE + image as u64);
    let sd = scale / (dim as f64).sqrt();
    gaussian_vector(&mut rng, dim).into_iter().map(|z| sd * z).collect()
}

fn compose(center: &[f64], noise: &[f64]) -> Vec<f32> {
    center.iter().zip(noise).map(|(c, n)| (c + n) as f32).collect()
}

/// Generates `profile`'s population, identities grouped by group and images
/// grouped by identity.
pub fn gen_population(profile: &BiasProfile, seed: u64) -> Result<(EmbeddingSet, SynthTruth)> {
    profile.validate()?;
    let dim = profile.dim;
    let mut dir_rng = seeded_rng(seed, STREAM_GROUP_DIRECTIONS);
    let group_directions: Vec<Vec<f64>> = profile
        .groups
        .iter()
        .map(|_| unit_gaussian(&mut dir_rng, dim))
        .collect();
    let mut center_rng = seeded_rng(seed, STREAM_CENTERS);
    let identity_group = profile.identity_groups();
    let contour_centers: Vec<Vec<f64>> = identity_group
        .iter()
        .map(|_| unit_gaussian(&mut center_rng, dim))
        .collect();

    let mut expected_inter_order: Vec<usize> = (0..profile.groups.len()).collect();
    expected_inter_order.sort_by(|&a, &b| {
        profile.groups[a]
            .concentration
            .total_cmp(&profile.groups[b].concentration)
    });

    let truth = SynthTruth {
        seed,
        profile: profile.clone(),
        group_directions,
        contour_centers,
        identity_group,
        expected_inter_order,
    };

    let per = profile.images_per_identity;
    let n = profile.num_images();
    let mut vectors = Vec::with_capacity(n * dim);
    let mut identity = Vec::with_capacity(n);
    let mut attribute = Vec::with_capacity(n);
    for (k, &g) in truth.identity_group.iter().enumerate() {
        let center = truth.center(k);
        let scale = profile.groups[g].intra_scale;
        for image in k * per..(k + 1) * per {
            vectors.extend(compose(&center, &image_noise(seed, image, dim, scale)));
            identity.push(k as u32);
            attribute.push(g as u16);
        }
    }

    let mut local = vec![0usize; profile.groups.len()];
    let identities = truth
        .identity_group
        .iter()
        .map(|&g| {
            local[g] += 1;
            format!("{}_{}", profile.groups[g].name, local[g] - 1)
        })
        .collect();
    let labels = LabelTable {
        identities,
        attributes: profile.groups.iter().map(|g| g.name.clone()).collect(),
    };
    let set = EmbeddingSet::new(
        dim,
        vectors,
        identity,
        attribute,
        profile.groups.len(),
        labels,
    )?;
    Ok((set, truth))
}
