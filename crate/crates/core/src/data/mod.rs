//! Dataset construction: manifests, the synthetic two-domain benchmark,
//! group-aware splitting, the balanced auxiliary sampler, image-folder
//! ingestion, and augmentation.

mod image_io;
mod synthetic;

pub use image_io::{augment_batch, augment_image, ingest_image_folder, load_image, AugmentPolicy};
pub use synthetic::{generate_synthetic_domains, MismatchMode, SyntheticSpec};

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{DomainTag, InputKind, TensorBatch};

pub const MANIFEST_HEADER: &str = "#auxfer-manifest v1";

/// Sample payload: vectors live inline in the manifest, images by path.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Vector(Vec<f64>),
    Image(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub label: usize,
    pub group: Option<String>,
    pub payload: Payload,
}

/// A labeled dataset description with stable, line-oriented text form.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub domain: DomainTag,
    pub num_classes: usize,
    pub provenance: String,
    pub split: Option<String>,
    /// Square decode resolution for image payloads.
    pub resize: Option<u32>,
    /// Number of corrupted labels (synthetic auxiliary domains).
    pub flips: Option<usize>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.num_classes];
        for r in &self.records {
            h[r.label] += 1;
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if r.label >= self.num_classes {
                return Err(Error::data(format!(
                    "record '{}' has label {} but manifest declares {} classes",
                    r.id, r.label, self.num_classes
                )));
            }
            if !seen.insert(&r.id) {
                return Err(Error::data(format!("duplicate sample id '{}'", r.id)));
            }
        }
        Ok(())
    }

    /// Renders the stable text form (header block, then one record per
    /// line: id, label, group, locator — tab separated).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MANIFEST_HEADER}");
        let _ = writeln!(s, "#domain={}", self.domain);
        let _ = writeln!(s, "#classes={}", self.num_classes);
        let _ = writeln!(
            s,
            "#histogram={}",
            self.histogram()
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "#split={}", self.split.as_deref().unwrap_or("full"));
        let _ = writeln!(
            s,
            "#resize={}",
            self.resize.map(|r| r.to_string()).unwrap_or_else(|| "-".into())
        );
        let _ = writeln!(
            s,
            "#flips={}",
            self.flips.map(|f| f.to_string()).unwrap_or_else(|| "-".into())
        );
        let _ = writeln!(s, "#provenance={}", self.provenance);
        let _ = writeln!(s, "#columns=id,label,group,locator");
        for r in &self.records {
            let group = r.group.as_deref().unwrap_or("-");
            let locator = match &r.payload {
                Payload::Vector(v) => {
                    let vals: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
                    format!("vec:{}", vals.join(","))
                }
                Payload::Image(p) => format!("img:{}", p.display()),
            };
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.id, r.label, group, locator);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<DatasetManifest> {
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| Error::data("empty manifest"))?;
        if first != MANIFEST_HEADER {
            return Err(Error::data(format!("unsupported manifest header '{first}'")));
        }
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut records = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::data(format!("malformed header line '{line}'")))?;
                header.insert(k.to_string(), v.to_string());
                continue;
            }
            let mut parts = line.split('\t');
            let id = parts
                .next()
                .ok_or_else(|| Error::data("record missing id"))?
                .to_string();
            let label: usize = parts
                .next()
                .ok_or_else(|| Error::data("record missing label"))?
                .parse()
                .map_err(|_| Error::data(format!("bad label in record '{id}'")))?;
            let group = match parts.next() {
                Some("-") => None,
                Some(g) => Some(g.to_string()),
                None => return Err(Error::data(format!("record '{id}' missing group field"))),
            };
            let locator = parts
                .next()
                .ok_or_else(|| Error::data(format!("record '{id}' missing locator")))?;
            let payload = if let Some(vals) = locator.strip_prefix("vec:") {
                let mut v = Vec::new();
                for tok in vals.split(',') {
                    v.push(
                        tok.parse::<f64>()
                            .map_err(|_| Error::data(format!("bad vector value in '{id}'")))?,
                    );
                }
                Payload::Vector(v)
            } else if let Some(p) = locator.strip_prefix("img:") {
                Payload::Image(PathBuf::from(p))
            } else {
                return Err(Error::data(format!("unknown locator scheme in '{id}'")));
            };
            records.push(ManifestRecord {
                id,
                label,
                group,
                payload,
            });
        }
        let get = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| Error::data(format!("manifest missing header '{k}'")))
        };
        let domain = match get("domain")?.as_str() {
            "target" => DomainTag::Target,
            "auxiliary" => DomainTag::Auxiliary,
            other => return Err(Error::data(format!("unknown domain '{other}'"))),
        };
        let num_classes: usize = get("classes")?
            .parse()
            .map_err(|_| Error::data("bad classes header"))?;
        let opt = |v: String| if v == "-" { None } else { Some(v) };
        let split = opt(get("split")?).filter(|s| s != "full");
        let resize = match opt(get("resize")?) {
            None => None,
            Some(v) => Some(v.parse::<u32>().map_err(|_| Error::data("bad resize header"))?),
        };
        let flips = match opt(get("flips")?) {
            None => None,
            Some(v) => Some(v.parse::<usize>().map_err(|_| Error::data("bad flips header"))?),
        };
        let manifest = DatasetManifest {
            domain,
            num_classes,
            provenance: get("provenance")?,
            split,
            resize,
            flips,
            records,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Splits records `train_parts : test_parts`, honoring group ids: records
/// sharing a group never straddle the split. Ungrouped records count as
/// singleton groups.
pub fn split_manifest(
    manifest: &DatasetManifest,
    train_parts: u32,
    test_parts: u32,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if train_parts == 0 || test_parts == 0 {
        return Err(Error::config("split ratio parts must be positive"));
    }
    if manifest.is_empty() {
        return Err(Error::data("cannot split an empty manifest"));
    }
    // group key per record; first-appearance order
    let mut group_order: Vec<String> = Vec::new();
    let mut group_sizes: BTreeMap<String, usize> = BTreeMap::new();
    let key_of = |r: &ManifestRecord| r.group.clone().unwrap_or_else(|| format!("__solo:{}", r.id));
    for r in &manifest.records {
        let key = key_of(r);
        if !group_sizes.contains_key(&key) {
            group_order.push(key.clone());
        }
        *group_sizes.entry(key).or_insert(0) += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    group_order.shuffle(&mut rng);
    let n = manifest.len();
    let train_target = (n * train_parts as usize) / (train_parts + test_parts) as usize;
    let mut train_groups = std::collections::HashSet::new();
    let mut assigned = 0usize;
    for g in &group_order {
        if assigned >= train_target {
            break;
        }
        assigned += group_sizes[g];
        train_groups.insert(g.clone());
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in &manifest.records {
        if train_groups.contains(&key_of(r)) {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    let make = |records: Vec<ManifestRecord>, split: &str| DatasetManifest {
        domain: manifest.domain,
        num_classes: manifest.num_classes,
        provenance: manifest.provenance.clone(),
        split: Some(split.to_string()),
        resize: manifest.resize,
        flips: manifest.flips,
        records,
    };
    Ok((make(train, "train"), make(test, "test")))
}

// ---------------------------------------------------------------------------
// Balanced auxiliary sampler
// ---------------------------------------------------------------------------

/// Draws a class-balanced index subset of the requested size. Per-class
/// quotas differ by at most one; a class short of its quota is sampled with
/// replacement and counted in the returned warning counter.
pub fn balanced_indices(
    labels: &[usize],
    num_classes: usize,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, u64)> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::data(format!("label {l} out of range")));
        }
        per_class[l].push(i);
    }
    if let Some(empty) = per_class.iter().position(|v| v.is_empty()) {
        return Err(Error::data(format!(
            "auxiliary domain has no samples of class {empty}"
        )));
    }
    let mut warnings = 0u64;
    let mut out = Vec::with_capacity(size);
    for (c, pool) in per_class.iter().enumerate() {
        let quota = size / num_classes + usize::from(c < size % num_classes);
        let mut shuffled = pool.clone();
        shuffled.shuffle(rng);
        if quota <= shuffled.len() {
            out.extend_from_slice(&shuffled[..quota]);
        } else {
            warnings += (quota - shuffled.len()) as u64;
            out.extend_from_slice(&shuffled);
            for _ in shuffled.len()..quota {
                out.push(pool[rng.random_range(0..pool.len())]);
            }
        }
    }
    Ok((out, warnings))
}

/// Manifest-level balanced subset (see [`balanced_indices`]).
pub fn balanced_aux_subset(
    aux: &DatasetManifest,
    size: usize,
    seed: u64,
) -> Result<(DatasetManifest, u64)> {
    let labels: Vec<usize> = aux.records.iter().map(|r| r.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (indices, warnings) = balanced_indices(&labels, aux.num_classes, size, &mut rng)?;
    let records = indices.iter().map(|&i| aux.records[i].clone()).collect();
    Ok((
        DatasetManifest {
            domain: aux.domain,
            num_classes: aux.num_classes,
            provenance: aux.provenance.clone(),
            split: aux.split.clone(),
            resize: aux.resize,
            flips: aux.flips,
            records,
        },
        warnings,
    ))
}

// ---------------------------------------------------------------------------
// Materialized datasets for training/evaluation
// ---------------------------------------------------------------------------

/// Feature storage backing a loaded dataset: vectors sit in one matrix,
/// images are decoded lazily per batch.
#[derive(Debug, Clone)]
pub enum FeatureStore {
    Vectors(Array2<f64>),
    Images { paths: Vec<PathBuf>, resize: u32 },
}

/// A manifest materialized for training: labels and features addressable
/// by index.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub domain: DomainTag,
    pub num_classes: usize,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub store: FeatureStore,
}

impl LoadedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_kind(&self) -> InputKind {
        match self.store {
            FeatureStore::Vectors(_) => InputKind::Vector,
            FeatureStore::Images { .. } => InputKind::Image,
        }
    }

    /// Vector width, or channel count (3) for image datasets.
    pub fn feature_dim(&self) -> usize {
        match &self.store {
            FeatureStore::Vectors(a) => a.ncols(),
            FeatureStore::Images { .. } => 3,
        }
    }

    pub fn from_manifest(manifest: &DatasetManifest) -> Result<LoadedDataset> {
        manifest.validate()?;
        let ids: Vec<String> = manifest.records.iter().map(|r| r.id.clone()).collect();
        let labels: Vec<usize> = manifest.records.iter().map(|r| r.label).collect();
        let store = if manifest.records.is_empty() {
            FeatureStore::Vectors(Array2::zeros((0, 0)))
        } else {
            match &manifest.records[0].payload {
                Payload::Vector(first) => {
                    let dim = first.len();
                    let mut m = Array2::zeros((manifest.len(), dim));
                    for (i, r) in manifest.records.iter().enumerate() {
                        match &r.payload {
                            Payload::Vector(v) if v.len() == dim => {
                                for (j, &x) in v.iter().enumerate() {
                                    m[[i, j]] = x;
                                }
                            }
                            Payload::Vector(v) => {
                                return Err(Error::data(format!(
                                    "record '{}' has dim {} but expected {dim}",
                                    r.id,
                                    v.len()
                                )));
                            }
                            Payload::Image(_) => {
                                return Err(Error::data("mixed vector/image payloads"));
                            }
                        }
                    }
                    FeatureStore::Vectors(m)
                }
                Payload::Image(_) => {
                    let resize = manifest.resize.ok_or_else(|| {
                        Error::config("image manifest is missing the resize header")
                    })?;
                    let mut paths = Vec::with_capacity(manifest.len());
                    for r in &manifest.records {
                        match &r.payload {
                            Payload::Image(p) => paths.push(p.clone()),
                            Payload::Vector(_) => {
                                return Err(Error::data("mixed vector/image payloads"));
                            }
                        }
                    }
                    FeatureStore::Images { paths, resize }
                }
            }
        };
        Ok(LoadedDataset {
            domain: manifest.domain,
            num_classes: manifest.num_classes,
            ids,
            labels,
            store,
        })
    }

    pub fn labels_for(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn ids_for(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.ids[i].clone()).collect()
    }
}

/// Materializes a batch. Images are decoded at the stored resolution and,
/// when an augmentation policy and RNG are supplied, augmented per sample;
/// vector payloads pass through augmentation unchanged.
pub fn make_batch(
    ds: &LoadedDataset,
    indices: &[usize],
    augment: Option<(&AugmentPolicy, &mut ChaCha8Rng)>,
) -> Result<TensorBatch> {
    match &ds.store {
        FeatureStore::Vectors(m) => {
            let mut batch = Array2::zeros((indices.len(), m.ncols()));
            for (row, &i) in indices.iter().enumerate() {
                batch.row_mut(row).assign(&m.row(i));
            }
            Ok(TensorBatch::Vector(batch))
        }
        FeatureStore::Images { paths, resize } => {
            let s = *resize as usize;
            let mut batch = Array4::zeros((indices.len(), 3, s, s));
            let mut aug = augment;
            for (row, &i) in indices.iter().enumerate() {
                let mut img = load_image(&paths[i], *resize)?;
                if let Some((policy, rng)) = aug.as_mut() {
                    img = augment_image(&img, policy, rng);
                }
                for c in 0..3 {
                    for y in 0..s {
                        for x in 0..s {
                            batch[[row, c, y, x]] = img[[c, y, x]];
                        }
                    }
                }
            }
            Ok(TensorBatch::Image(batch))
        }
    }
}
