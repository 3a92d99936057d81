//! Implementations of the `gen-data`, `train`, `eval`, and `sweep`
//! commands. Every command writes its outputs under one run directory and
//! finishes by writing `run_manifest.txt`, a sorted list of the files it
//! produced.

use std::path::{Path, PathBuf};

use auxfer_core::data::{
    generate_synthetic_domains, ingest_image_folder, split_manifest, AugmentPolicy,
    DatasetManifest, LoadedDataset,
};
use auxfer_core::error::{Error, Result};
use auxfer_core::evalsuite::{
    self, compute_metrics, prediction_distribution, roc_curve, MetricsReport, SweepAxis,
};
use auxfer_core::model::{Checkpoint, DomainTag, InputKind, Model, RngState};
use auxfer_core::transfer::{self, diagnostics_to_csv, history_to_csv};

use crate::config::RunConfigFile;

/// Accumulates produced files and writes the run manifest last.
struct RunDir {
    root: PathBuf,
    produced: Vec<String>,
}

impl RunDir {
    fn create(root: &Path) -> Result<RunDir> {
        std::fs::create_dir_all(root)?;
        Ok(RunDir {
            root: root.to_path_buf(),
            produced: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        self.produced.push(rel.to_string());
        Ok(path)
    }

    fn record(&mut self, rel: &str) {
        self.produced.push(rel.to_string());
    }

    fn finish(mut self) -> Result<()> {
        self.produced.sort();
        let mut listing = self.produced.join("\n");
        listing.push('\n');
        std::fs::write(self.root.join("run_manifest.txt"), listing)?;
        println!("run manifest: {}", self.root.join("run_manifest.txt").display());
        Ok(())
    }
}

fn histogram_line(m: &DatasetManifest) -> String {
    m.histogram()
        .iter()
        .enumerate()
        .map(|(c, n)| format!("class {c}: {n}"))
        .collect::<Vec<_>>()
        .join(", ")
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

pub fn cmd_gen_data(cfg: &RunConfigFile) -> Result<()> {
    let (target, aux) = build_full_manifests(cfg)?;
    let (train, test) = split_manifest(
        &target,
        cfg.data.split_train_parts,
        cfg.data.split_test_parts,
        cfg.data.split_seed,
    )?;
    let mut run = RunDir::create(&cfg.out_dir)?;
    for (name, manifest) in [
        ("target.manifest", &target),
        ("target_train.manifest", &train),
        ("target_test.manifest", &test),
        ("aux.manifest", &aux),
    ] {
        let path = run.write(name, &manifest.to_text())?;
        println!(
            "{} ({} samples; {})",
            path.display(),
            manifest.len(),
            histogram_line(manifest)
        );
    }
    if let Some(flips) = aux.flips {
        println!("flipped {flips} auxiliary labels");
    }
    run.finish()
}

fn build_full_manifests(cfg: &RunConfigFile) -> Result<(DatasetManifest, DatasetManifest)> {
    match cfg.data.source.as_str() {
        "synthetic" => generate_synthetic_domains(&cfg.data.synthetic),
        "folders" => {
            let target_dir = cfg
                .data
                .target_dir
                .as_ref()
                .ok_or_else(|| Error::config("data.target_dir is required for source = folders"))?;
            let aux_dir = cfg
                .data
                .aux_dir
                .as_ref()
                .ok_or_else(|| Error::config("data.aux_dir is required for source = folders"))?;
            let (target, w1) = ingest_image_folder(target_dir, cfg.data.resize, DomainTag::Target)?;
            let (aux, w2) = ingest_image_folder(aux_dir, cfg.data.resize, DomainTag::Auxiliary)?;
            if w1 + w2 > 0 {
                eprintln!("warning: skipped {} unreadable files", w1 + w2);
            }
            Ok((target, aux))
        }
        other => Err(Error::config(format!(
            "data.source '{other}' cannot generate manifests (use synthetic or folders)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// dataset resolution shared by train/eval/sweep
// ---------------------------------------------------------------------------

pub struct ResolvedData {
    pub target_train: LoadedDataset,
    pub target_test: Option<LoadedDataset>,
    pub aux: Option<LoadedDataset>,
}

pub fn resolve_datasets(cfg: &RunConfigFile) -> Result<ResolvedData> {
    match cfg.data.source.as_str() {
        "synthetic" | "folders" => {
            let (target, aux) = build_full_manifests(cfg)?;
            let (train, test) = split_manifest(
                &target,
                cfg.data.split_train_parts,
                cfg.data.split_test_parts,
                cfg.data.split_seed,
            )?;
            let aux_loaded = if aux.is_empty() {
                None
            } else {
                Some(LoadedDataset::from_manifest(&aux)?)
            };
            Ok(ResolvedData {
                target_train: LoadedDataset::from_manifest(&train)?,
                target_test: Some(LoadedDataset::from_manifest(&test)?),
                aux: aux_loaded,
            })
        }
        "manifests" => {
            let train_path = cfg.data.target_train.as_ref().ok_or_else(|| {
                Error::config("data.target_train is required for source = manifests")
            })?;
            let target_train = LoadedDataset::from_manifest(&DatasetManifest::load(train_path)?)?;
            let target_test = match &cfg.data.target_test {
                Some(p) => Some(LoadedDataset::from_manifest(&DatasetManifest::load(p)?)?),
                None => None,
            };
            let aux = match &cfg.data.aux {
                Some(p) => {
                    let m = DatasetManifest::load(p)?;
                    if m.is_empty() {
                        None
                    } else {
                        Some(LoadedDataset::from_manifest(&m)?)
                    }
                }
                None => None,
            };
            Ok(ResolvedData {
                target_train,
                target_test,
                aux,
            })
        }
        other => Err(Error::config(format!(
            "unknown data.source '{other}' (known: synthetic, folders, manifests)"
        ))),
    }
}

pub fn resolve_backbone(cfg: &RunConfigFile, data: &ResolvedData) -> Result<auxfer_core::model::BackboneConfig> {
    let kind = data.target_train.input_kind();
    let dim = data.target_train.feature_dim();
    let classes = data.target_train.num_classes;
    cfg.model.resolve(kind, dim, classes)
}

fn augment_for(cfg: &RunConfigFile, data: &ResolvedData) -> Option<AugmentPolicy> {
    if cfg.data.augment_enabled && data.target_train.input_kind() == InputKind::Image {
        Some(cfg.data.augment.clone())
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(cfg: &RunConfigFile) -> Result<()> {
    let train_config = cfg.train_config();
    train_config.validate()?;
    let data = resolve_datasets(cfg)?;
    let backbone = resolve_backbone(cfg, &data)?;
    let mut model = Model::new(&backbone, train_config.seed)?;
    let augment = augment_for(cfg, &data);

    let mut run = RunDir::create(&cfg.out_dir)?;
    run.write("config_resolved.toml", &crate::config::to_toml_string(cfg)?)?;

    let cadence = cfg.train.checkpoint_every;
    let train_echo = serde_json::to_value(&train_config)
        .map_err(|e| Error::config(format!("cannot serialize train config: {e}")))?;
    let mut periodic: Vec<String> = Vec::new();
    let output = {
        let mut hook = |model: &Model, record: &transfer::EpochRecord| -> Result<()> {
            println!(
                "epoch {:>3}  clf {:.4}  eda {:.4}  psa {:.4}  total {:.4}{}",
                record.epoch,
                record.l_clf,
                record.l_eda,
                record.l_psa,
                record.total,
                record
                    .val_accuracy
                    .map(|a| format!("  val_acc {a:.4}"))
                    .unwrap_or_default()
            );
            if cadence > 0 && (record.epoch + 1) % cadence == 0 {
                let rel = format!("checkpoint_epoch_{:04}.json", record.epoch);
                let ck = Checkpoint::from_model(model, record.epoch + 1, Some(train_echo.clone()), None);
                ck.save(&cfg.out_dir.join(&rel))?;
                periodic.push(rel);
            }
            Ok(())
        };
        transfer::train_with_hook(
            &mut model,
            &data.target_train,
            data.aux.as_ref(),
            data.target_test.as_ref(),
            augment.as_ref(),
            &train_config,
            Some(&mut hook),
        )?
    };
    for rel in periodic {
        run.record(&rel);
    }

    run.write("history.csv", &history_to_csv(&output.history))?;
    // one diagnostics file per epoch
    let mut by_epoch: std::collections::BTreeMap<usize, Vec<transfer::DiagRecord>> =
        Default::default();
    for d in output.diagnostics {
        by_epoch.entry(d.epoch).or_default().push(d);
    }
    for (epoch, rows) in by_epoch {
        run.write(
            &format!("diagnostics/epoch_{epoch:04}.csv"),
            &diagnostics_to_csv(&rows),
        )?;
    }

    let rng_state: RngState = output.rng_state;
    let ck = Checkpoint::from_model(
        &model,
        train_config.total_epochs,
        Some(train_echo),
        Some(rng_state),
    );
    ck.save(&cfg.out_dir.join("checkpoint.json"))?;
    run.record("checkpoint.json");

    if output.warnings != Default::default() {
        eprintln!(
            "warnings: bce clamps {}, positive-less psa batches {}, eda skips {}, sampler replacements {}",
            output.warnings.bce_clamp_events,
            output.warnings.psa_no_positive_batches,
            output.warnings.eda_skipped_batches,
            output.warnings.sampler_replacement_draws
        );
    }
    if let Some(last) = output.history.last() {
        if let Some(acc) = last.val_accuracy {
            println!("final val accuracy: {acc:.4}");
        }
    }
    println!("history: {}", cfg.out_dir.join("history.csv").display());
    println!("checkpoint: {}", cfg.out_dir.join("checkpoint.json").display());
    run.finish()
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn cmd_eval(
    cfg: &RunConfigFile,
    checkpoint_path: &Path,
    data_path: &Path,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint_path)?;
    let manifest = DatasetManifest::load(data_path)?;
    if manifest.is_empty() {
        return Err(Error::data(format!(
            "manifest {} contains no samples",
            data_path.display()
        )));
    }
    if manifest.num_classes != ck.backbone.num_classes {
        return Err(Error::config(format!(
            "num_classes mismatch: checkpoint has {}, dataset has {}",
            ck.backbone.num_classes, manifest.num_classes
        )));
    }
    let ds = LoadedDataset::from_manifest(&manifest)?;
    if ds.input_kind() != ck.backbone.input_kind
        || ds.feature_dim() != ck.backbone.input_dim
    {
        return Err(Error::config(format!(
            "input_dim mismatch: checkpoint expects {:?} dim {}, dataset is {:?} dim {}",
            ck.backbone.input_kind,
            ck.backbone.input_dim,
            ds.input_kind(),
            ds.feature_dim()
        )));
    }
    let model = ck.into_model()?;
    let (scores, labels) = evalsuite::score_dataset(&model, &ds)?;
    let positive = cfg.eval.positive_class;
    let report = compute_metrics(&scores, &labels, positive)?;

    // everything validated; only now start writing files
    let mut run = RunDir::create(&cfg.out_dir)?;
    run.write("metrics.csv", &report.to_csv())?;
    let summary = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::data(format!("cannot serialize report: {e}")))?;
    run.write("summary.json", &summary)?;

    if model.config.num_classes == 2 {
        let pos_scores: Vec<f64> = scores.column(positive).to_vec();
        let is_pos: Vec<bool> = labels.iter().map(|&l| l == positive).collect();
        if let Ok(points) = roc_curve(&pos_scores, &is_pos) {
            run.write("roc_points.csv", &evalsuite::roc_points_to_csv(&points))?;
        }
        let groups: Vec<String> = labels.iter().map(|&l| format!("class_{l}")).collect();
        let dist = prediction_distribution(&pos_scores, &groups)?;
        run.write(
            "prediction_distribution.csv",
            &evalsuite::distribution_to_csv(&dist),
        )?;
    }

    println!("accuracy: {}", report.accuracy);
    if let Some(auc) = &report.roc_auc {
        println!("roc_auc: {}", auc.to_cell());
    }
    println!("reports under {}", cfg.out_dir.display());
    run.finish()
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

pub fn cmd_sweep(
    cfg: &RunConfigFile,
    axis_name: &str,
    grid: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<()> {
    let axis = SweepAxis::parse(axis_name)?;
    let data = resolve_datasets(cfg)?;
    let backbone = resolve_backbone(cfg, &data)?;
    let base = cfg.train_config();
    base.validate()?;
    let augment = augment_for(cfg, &data);
    let test = data
        .target_test
        .as_ref()
        .ok_or_else(|| Error::config("sweep needs a target test split"))?;

    let runner = |value: f64, seed: u64| -> Result<MetricsReport> {
        let mut config = base.clone();
        config.seed = seed;
        match axis {
            SweepAxis::SigmaAlign => config.sigma_align = value,
            SweepAxis::SigmaClf => config.sigma_clf = value,
            SweepAxis::TargetFraction => config.target_fraction = value,
        }
        config.validate()?;
        let mut model = Model::new(&backbone, seed)?;
        transfer::train(
            &mut model,
            &data.target_train,
            data.aux.as_ref(),
            None,
            augment.as_ref(),
            &config,
        )?;
        let (scores, labels) = evalsuite::score_dataset(&model, test)?;
        let mut report = compute_metrics(&scores, &labels, cfg.eval.positive_class)?;
        report.seed = Some(seed);
        Ok(report)
    };

    let table = evalsuite::threshold_sweep(axis, grid, seeds, jobs, runner)?;
    let mut run = RunDir::create(&cfg.out_dir)?;
    run.write("sweep_rows.csv", &table.rows_to_csv())?;
    run.write("sweep_summary.csv", &table.summary_to_csv())?;
    let best = serde_json::to_string_pretty(&table)
        .map_err(|e| Error::data(format!("cannot serialize sweep table: {e}")))?;
    run.write("sweep.json", &best)?;
    for s in &table.summary {
        println!(
            "{} = {}: accuracy {:.4} +/- {:.4} over {} runs",
            table.axis, s.axis_value, s.mean_accuracy, s.sd_accuracy, s.n_runs
        );
    }
    println!("best {}: {}", table.axis, table.best_axis_value);
    run.finish()
}

