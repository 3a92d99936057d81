//! Run configuration: the TOML file schema, environment-variable
//! overrides, and resolution into the core configuration types.
//!
//! Precedence, lowest to highest: documented defaults, the config file,
//! `AUXFER_*` environment variables, CLI flags. Unknown keys anywhere are
//! rejected.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use auxfer_core::data::{AugmentPolicy, SyntheticSpec};
use auxfer_core::eda::EdaSettings;
use auxfer_core::error::{Error, Result};
use auxfer_core::model::{BackboneConfig, InputKind};
use auxfer_core::transfer::TrainConfig;

/// Environment variables prefixed with this override config-file keys;
/// `__` separates path segments (`AUXFER_TRAIN__SEED=7` sets `train.seed`).
pub const ENV_PREFIX: &str = "AUXFER_";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub eda: EdaSettings,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        RunConfigFile {
            out_dir: PathBuf::from("auxfer-run"),
            data: DataSection::default(),
            model: ModelSection::default(),
            eda: EdaSettings::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// "synthetic", "folders", or "manifests".
    pub source: String,
    pub synthetic: SyntheticSpec,
    pub split_train_parts: u32,
    pub split_test_parts: u32,
    pub split_seed: u64,
    /// Image-folder ingestion roots (`source = "folders"`).
    pub target_dir: Option<PathBuf>,
    pub aux_dir: Option<PathBuf>,
    pub resize: u32,
    /// Pre-built manifests (`source = "manifests"`).
    pub target_train: Option<PathBuf>,
    pub target_test: Option<PathBuf>,
    pub aux: Option<PathBuf>,
    /// Augmentation applies to image payloads only.
    pub augment_enabled: bool,
    pub augment: AugmentPolicy,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: "synthetic".to_string(),
            synthetic: SyntheticSpec::default(),
            split_train_parts: 4,
            split_test_parts: 1,
            split_seed: 17,
            target_dir: None,
            aux_dir: None,
            resize: 224,
            target_train: None,
            target_test: None,
            aux: None,
            augment_enabled: true,
            augment: AugmentPolicy::default(),
        }
    }
}

/// Backbone overrides; unset fields are inferred from the data or fall
/// back to the built-in defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub input_kind: Option<InputKind>,
    pub input_dim: Option<usize>,
    pub stage_sizes: Option<Vec<usize>>,
    pub split_stage: Option<usize>,
    pub hidden_dim_f: Option<usize>,
    pub proj_dim: Option<usize>,
    pub num_classes: Option<usize>,
    pub disc_hidden: Option<usize>,
}

impl ModelSection {
    /// Builds the backbone config, reconciling user overrides with the
    /// dimensions observed in the data.
    pub fn resolve(
        &self,
        inferred_kind: InputKind,
        inferred_dim: usize,
        inferred_classes: usize,
    ) -> Result<BackboneConfig> {
        if let Some(k) = self.input_kind {
            if k != inferred_kind {
                return Err(Error::config(format!(
                    "model.input_kind {k:?} conflicts with the data ({inferred_kind:?})"
                )));
            }
        }
        if let Some(d) = self.input_dim {
            if d != inferred_dim {
                return Err(Error::config(format!(
                    "model.input_dim {d} conflicts with the data (dim {inferred_dim})"
                )));
            }
        }
        if let Some(k) = self.num_classes {
            if k != inferred_classes {
                return Err(Error::config(format!(
                    "model.num_classes {k} conflicts with the data ({inferred_classes} classes)"
                )));
            }
        }
        let defaults = BackboneConfig::default();
        let config = BackboneConfig {
            input_kind: inferred_kind,
            input_dim: inferred_dim,
            stage_sizes: self.stage_sizes.clone().unwrap_or(defaults.stage_sizes),
            split_stage: self.split_stage.unwrap_or(defaults.split_stage),
            hidden_dim_f: self.hidden_dim_f.unwrap_or(defaults.hidden_dim_f),
            proj_dim: self.proj_dim.unwrap_or(defaults.proj_dim),
            num_classes: inferred_classes,
            disc_hidden: self.disc_hidden.unwrap_or(defaults.disc_hidden),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Mirrors [`TrainConfig`] minus the EDA settings (which live under
/// `[eda]`), plus the checkpoint cadence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma_align: f64,
    pub sigma_clf: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size_target: usize,
    pub batch_size_aux: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub temperature: f64,
    pub force_eta_one: bool,
    pub target_fraction: f64,
    /// Write a checkpoint every N epochs (0 = final checkpoint only).
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            alpha: d.alpha,
            beta: d.beta,
            gamma: d.gamma,
            sigma_align: d.sigma_align,
            sigma_clf: d.sigma_clf,
            warmup_epochs: d.warmup_epochs,
            total_epochs: d.total_epochs,
            batch_size_target: d.batch_size_target,
            batch_size_aux: d.batch_size_aux,
            learning_rate: d.learning_rate,
            weight_decay: d.weight_decay,
            seed: d.seed,
            temperature: d.temperature,
            force_eta_one: d.force_eta_one,
            target_fraction: d.target_fraction,
            checkpoint_every: 0,
        }
    }
}

impl RunConfigFile {
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            alpha: t.alpha,
            beta: t.beta,
            gamma: t.gamma,
            sigma_align: t.sigma_align,
            sigma_clf: t.sigma_clf,
            warmup_epochs: t.warmup_epochs,
            total_epochs: t.total_epochs,
            batch_size_target: t.batch_size_target,
            batch_size_aux: t.batch_size_aux,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            seed: t.seed,
            eda: self.eda.clone(),
            temperature: t.temperature,
            force_eta_one: t.force_eta_one,
            target_fraction: t.target_fraction,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub positive_class: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { positive_class: 1 }
    }
}

/// Loads the config file (if any) and applies `AUXFER_*` environment
/// overrides before deserializing, so typos in either are rejected.
pub fn load_config(
    path: Option<&Path>,
    env: impl Iterator<Item = (String, String)>,
) -> Result<RunConfigFile> {
    let mut root: toml::Table = match path {
        None => toml::Table::new(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::config(format!("cannot parse config {}: {e}", p.display())))?
        }
    };
    for (key, raw) in env {
        let Some(stripped) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let segments: Vec<String> = stripped.split("__").map(|s| s.to_lowercase()).collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(Error::config(format!("malformed override variable '{key}'")));
        }
        let value = parse_env_value(&raw);
        insert_path(&mut root, &segments, value, &key)?;
    }
    toml::Value::Table(root)
        .try_into::<RunConfigFile>()
        .map_err(|e| Error::config(format!("invalid configuration: {e}")))
}

/// Values parse as TOML scalars when possible and fall back to strings,
/// so `AUXFER_TRAIN__SEED=7` is a number but `AUXFER_EDA__VARIANT=mkmmd`
/// stays a string.
fn parse_env_value(raw: &str) -> toml::Value {
    let attempt = format!("v = {raw}");
    if let Ok(table) = attempt.parse::<toml::Table>() {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn insert_path(
    table: &mut toml::Table,
    segments: &[String],
    value: toml::Value,
    origin: &str,
) -> Result<()> {
    if segments.len() == 1 {
        table.insert(segments[0].clone(), value);
        return Ok(());
    }
    let entry = table
        .entry(segments[0].clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => insert_path(t, &segments[1..], value, origin),
        _ => Err(Error::config(format!(
            "override '{origin}' descends into non-table key '{}'",
            segments[0]
        ))),
    }
}

pub fn to_toml_string(config: &RunConfigFile) -> Result<String> {
    toml::to_string_pretty(config)
        .map_err(|e| Error::config(format!("cannot serialize configuration: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfigFile::default();
        assert!(cfg.train_config().validate().is_ok());
        assert_eq!(cfg.train.alpha, 0.1);
        assert_eq!(cfg.train.beta, 0.01);
        assert_eq!(cfg.train.gamma, 0.1);
        assert_eq!(cfg.train.sigma_align, 0.4);
        assert_eq!(cfg.train.sigma_clf, 0.9);
        assert_eq!(cfg.train.warmup_epochs, 5);
        assert_eq!(cfg.train.batch_size_target, 128);
        assert_eq!(cfg.train.learning_rate, 1e-4);
        assert_eq!(cfg.train.weight_decay, 1e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "[train]\nsigma_algin = 0.4\n").unwrap();
        let err = load_config(Some(&path), std::iter::empty()).unwrap_err();
        assert!(err.to_string().contains("sigma_algin"));
    }

    #[test]
    fn env_overrides_apply_with_typed_values() {
        let env = vec![
            ("AUXFER_TRAIN__SEED".to_string(), "99".to_string()),
            ("AUXFER_EDA__VARIANT".to_string(), "mkmmd".to_string()),
            ("AUXFER_TRAIN__LEARNING_RATE".to_string(), "0.5".to_string()),
            ("OTHER_VAR".to_string(), "ignored".to_string()),
        ];
        let cfg = load_config(None, env.into_iter()).unwrap();
        assert_eq!(cfg.train.seed, 99);
        assert_eq!(cfg.eda.variant, "mkmmd");
        assert_eq!(cfg.train.learning_rate, 0.5);
    }

    #[test]
    fn env_typos_are_rejected_too() {
        let env = vec![("AUXFER_TRAIN__SEEED".to_string(), "1".to_string())];
        assert!(load_config(None, env.into_iter()).is_err());
    }

    #[test]
    fn file_then_env_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "[train]\nseed = 5\nalpha = 0.3\n").unwrap();
        let env = vec![("AUXFER_TRAIN__SEED".to_string(), "9".to_string())];
        let cfg = load_config(Some(&path), env.into_iter()).unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.alpha, 0.3);
    }

    #[test]
    fn model_section_resolution_conflicts_name_the_field() {
        let section = ModelSection {
            num_classes: Some(5),
            ..Default::default()
        };
        let err = section.resolve(InputKind::Vector, 16, 2).unwrap_err();
        assert!(err.to_string().contains("num_classes"));
        let section = ModelSection {
            input_dim: Some(4),
            ..Default::default()
        };
        let err = section.resolve(InputKind::Vector, 16, 2).unwrap_err();
        assert!(err.to_string().contains("input_dim"));
    }

    #[test]
    fn resolved_config_serializes_back_to_toml() {
        let cfg = RunConfigFile::default();
        let text = to_toml_string(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.toml");
        std::fs::write(&path, text).unwrap();
        let back = load_config(Some(&path), std::iter::empty()).unwrap();
        assert_eq!(back.train.seed, cfg.train.seed);
        assert_eq!(back.data.synthetic, cfg.data.synthetic);
    }
}
