//! Synthetic two-domain benchmark with controllable covariate shift and
//! label-criterion mismatch.
//!
//! The target domain is K unit-covariance Gaussian clusters whose means sit
//! on the vertices of a seeded regular simplex with edge length
//! `class_separation` (so `class_separation` is the distance between any
//! two class means). The auxiliary domain draws from the same clusters, is
//! pushed through an affine shift (rotation in the first coordinate plane
//! plus a constant translation on every coordinate), and then has a
//! controlled fraction of its labels corrupted. Target labels are never
//! touched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetManifest, ManifestRecord, Payload};
use crate::error::{Error, Result};
use crate::model::DomainTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MismatchMode {
    /// Flip labels of uniformly chosen auxiliary samples.
    Uniform,
    /// Concentrate flips on the samples nearest the decision boundary.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub n_target: usize,
    pub n_aux: usize,
    pub class_separation: f64,
    pub shift_rotation_degrees: f64,
    pub shift_translation: f64,
    pub mismatch_rate: f64,
    pub mismatch_mode: MismatchMode,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 2,
            dim: 16,
            n_target: 800,
            n_aux: 4000,
            class_separation: 3.0,
            shift_rotation_degrees: 25.0,
            shift_translation: 1.0,
            mismatch_rate: 0.3,
            mismatch_mode: MismatchMode::Boundary,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("synthetic spec needs at least 2 classes"));
        }
        if self.dim < self.num_classes {
            return Err(Error::config(
                "synthetic spec needs dim >= num_classes for an orthonormal frame",
            ));
        }
        if self.n_target < self.num_classes {
            return Err(Error::config("n_target must cover every class"));
        }
        if self.n_aux != 0 && self.n_aux < self.num_classes {
            return Err(Error::config("n_aux must be 0 or cover every class"));
        }
        if !(0.0..=1.0).contains(&self.mismatch_rate) {
            return Err(Error::config("mismatch_rate must be in [0, 1]"));
        }
        if !self.class_separation.is_finite() || self.class_separation < 0.0 {
            return Err(Error::config("class_separation must be finite and >= 0"));
        }
        Ok(())
    }

    /// Hash of the canonical JSON serialization, used as manifest provenance.
    pub fn provenance(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let hex: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        format!("sha256:{hex}")
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// K orthonormal directions in `dim` dimensions via Gram-Schmidt over
/// seeded Gaussian draws.
fn orthonormal_means(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        // retry until the residual is numerically independent
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
            for prev in &means {
                let dot: f64 = v.iter().zip(prev.iter()).map(|(a, b)| a * b).sum();
                for (x, p) in v.iter_mut().zip(prev.iter()) {
                    *x -= dot * p;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for x in v.iter_mut() {
                    *x /= norm;
                }
                means.push(v);
                break;
            }
        }
    }
    Ok(means)
}

/// Rotation in the (0, 1) coordinate plane followed by a constant
/// translation on every coordinate.
fn apply_shift(x: &mut [f64], angle_rad: f64, translation: f64) {
    if x.len() >= 2 {
        let (c, s) = (angle_rad.cos(), angle_rad.sin());
        let (a, b) = (x[0], x[1]);
        x[0] = c * a - s * b;
        x[1] = s * a + c * b;
    }
    for v in x.iter_mut() {
        *v += translation;
    }
}

/// Builds the target and auxiliary manifests. Fully deterministic given
/// the spec; identical specs produce byte-identical manifest text.
pub fn generate_synthetic_domains(
    spec: &SyntheticSpec,
) -> Result<(DatasetManifest, DatasetManifest)> {
    spec.validate()?;
    let provenance = spec.provenance();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.num_classes;
    // orthonormal directions are pairwise sqrt(2) apart, so this scale
    // puts every pair of class means exactly class_separation apart
    let scale = spec.class_separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = orthonormal_means(k, spec.dim, &mut rng)?
        .into_iter()
        .map(|m| m.iter().map(|v| v * scale).collect())
        .collect();

    let draw = |label: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        means[label]
            .iter()
            .map(|&m| m + standard_normal(rng))
            .collect()
    };

    // target: clean labels, round-robin classes
    let mut target_records = Vec::with_capacity(spec.n_target);
    for i in 0..spec.n_target {
        let label = i % k;
        target_records.push(ManifestRecord {
            id: format!("t{i:05}"),
            label,
            group: None,
            payload: Payload::Vector(draw(label, &mut rng)),
        });
    }

    // auxiliary: same clusters, then shift, then label corruption
    let mut aux_features: Vec<Vec<f64>> = Vec::with_capacity(spec.n_aux);
    let mut aux_labels: Vec<usize> = Vec::with_capacity(spec.n_aux);
    for i in 0..spec.n_aux {
        let label = i % k;
        aux_features.push(draw(label, &mut rng));
        aux_labels.push(label);
    }

    // margins and nearest-other computed on the unshifted geometry
    let dist = |x: &[f64], m: &[f64]| -> f64 {
        x.iter()
            .zip(m.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let n_flips = (spec.mismatch_rate * spec.n_aux as f64).floor() as usize;
    let mut flip_targets: Vec<(usize, usize)> = Vec::new(); // (index, new label)
    if n_flips > 0 {
        match spec.mismatch_mode {
            MismatchMode::Uniform => {
                let chosen = rand::seq::index::sample(&mut rng, spec.n_aux, n_flips);
                for idx in chosen.iter() {
                    let own = aux_labels[idx];
                    let offset = rng.random_range(1..k);
                    flip_targets.push((idx, (own + offset) % k));
                }
            }
            MismatchMode::Boundary => {
                let mut margins: Vec<(f64, usize, usize)> = aux_features
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let own = aux_labels[i];
                        let d_own = dist(x, &means[own]);
                        let (nearest_other, d_other) = (0..k)
                            .filter(|&c| c != own)
                            .map(|c| (c, dist(x, &means[c])))
                            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                            .expect("k >= 2");
                        (d_other - d_own, i, nearest_other)
                    })
                    .collect();
                margins.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                for &(_, idx, other) in margins.iter().take(n_flips) {
                    flip_targets.push((idx, other));
                }
            }
        }
        for &(idx, new_label) in &flip_targets {
            aux_labels[idx] = new_label;
        }
    }

    let angle = spec.shift_rotation_degrees.to_radians();
    let mut aux_records = Vec::with_capacity(spec.n_aux);
    for (i, (mut x, label)) in aux_features.into_iter().zip(aux_labels).enumerate() {
        apply_shift(&mut x, angle, spec.shift_translation);
        aux_records.push(ManifestRecord {
            id: format!("a{i:05}"),
            label,
            group: None,
            payload: Payload::Vector(x),
        });
    }

    let target = DatasetManifest {
        domain: DomainTag::Target,
        num_classes: k,
        provenance: provenance.clone(),
        split: None,
        resize: None,
        flips: None,
        records: target_records,
    };
    let aux = DatasetManifest {
        domain: DomainTag::Auxiliary,
        num_classes: k,
        provenance,
        split: None,
        resize: None,
        flips: Some(n_flips),
        records: aux_records,
    };
    Ok((target, aux))
}
