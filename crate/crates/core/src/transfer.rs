//! Classification losses, the total objective, and the training loop:
//! warm-up scheduling, per-epoch prototype refresh, balanced two-domain
//! batching, and AdamW optimization.
//!
//! # RNG protocol
//!
//! All stochastic choices derive from `TrainConfig::seed` so runs are
//! reproducible in single-threaded mode:
//!
//! - model initialization uses `ChaCha8Rng::seed_from_u64(seed)` (stream 0),
//! - the training master stream is the same seed on stream 1 and is
//!   consumed in a fixed order: one sub-seed for the target-fraction
//!   subsample, then per epoch one sub-seed each for the target shuffle,
//!   the balanced auxiliary subset, and augmentation.
//!
//! Sub-seeds are always drawn, even when the consumer is inactive, so
//! ablated configurations stay aligned with the full method.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{balanced_indices, make_batch, AugmentPolicy, LoadedDataset};
use crate::eda::{self, EdaOutcome, EdaSettings};
use crate::error::{Error, Result};
use crate::evalsuite;
use crate::model::{DomainTag, HeadGrads, Model};
use crate::nn::AdamW;
use crate::psa::{self, PrototypeTable};

/// Loss coefficients, thresholds, schedule, and optimizer settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the early-domain-alignment loss.
    pub alpha: f64,
    /// Weight of the prototypical semantic alignment loss.
    pub beta: f64,
    /// Weight of the inter-domain classification loss.
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
    pub eda: EdaSettings,
    /// Contrastive temperature. 1.0 matches the plain cosine formulation;
    /// 0.1 is the usual choice when sharper contrast is wanted.
    pub temperature: f64,
    /// Ablation switch: treat every auxiliary consistency score as 1
    /// (no filtering, unit weighting).
    pub force_eta_one: bool,
    /// Fraction of the target training set actually used.
    pub target_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            beta: 0.01,
            gamma: 0.1,
            sigma_align: 0.4,
            sigma_clf: 0.9,
            warmup_epochs: 5,
            total_epochs: 20,
            batch_size_target: 128,
            batch_size_aux: 128,
            learning_rate: 1e-4,
            weight_decay: 1e-3,
            seed: 1,
            eda: EdaSettings::default(),
            temperature: 1.0,
            force_eta_one: false,
            target_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be >= 0 and finite")));
            }
        }
        for (name, v) in [("sigma_align", self.sigma_align), ("sigma_clf", self.sigma_clf)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must be in [0, 1]")));
            }
        }
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::config(
                "warmup_epochs must be smaller than total_epochs",
            ));
        }
        if self.batch_size_target < 2 || self.batch_size_aux < 2 {
            return Err(Error::config("batch sizes must be at least 2"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::config("target_fraction must be in (0, 1]"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Classification losses
// ---------------------------------------------------------------------------

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[derive(Debug, Clone)]
pub struct CeOutcome {
    pub value: f64,
    pub d_logits: Array2<f64>,
}

/// Mean cross-entropy over the target mini-batch.
pub fn intra_clf_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<CeOutcome> {
    let n = logits.nrows();
    if n == 0 {
        return Err(Error::config("intra_clf_loss needs a non-empty batch"));
    }
    if labels.len() != n {
        return Err(Error::config("labels length does not match logits"));
    }
    let k = logits.ncols();
    for &y in labels {
        if y >= k {
            return Err(Error::data(format!("label {y} out of range for {k} classes")));
        }
    }
    let log_p = log_softmax_rows(logits);
    let mut value = 0.0;
    let mut d = Array2::zeros(logits.dim());
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        value -= log_p[[i, y]];
        for c in 0..k {
            d[[i, c]] = (log_p[[i, c]].exp() - f64::from(c == y)) * inv_n;
        }
    }
    Ok(CeOutcome {
        value: value * inv_n,
        d_logits: d,
    })
}

#[derive(Debug, Clone)]
pub struct InterClfOutcome {
    pub value: f64,
    pub d_logits: Array2<f64>,
    /// Number of auxiliary samples admitted by `sigma_clf`.
    pub n_used: usize,
}

/// Consistency-weighted cross-entropy over the filtered auxiliary batch:
/// `(gamma / |filtered|) * sum eta_i * CE_i`, zero when nothing passes the
/// threshold. Consistency scores are treated as constants.
pub fn inter_clf_loss(
    logits: &Array2<f64>,
    labels: &[usize],
    etas: &[f64],
    sigma_clf: f64,
    gamma: f64,
) -> Result<InterClfOutcome> {
    let n = logits.nrows();
    if labels.len() != n || etas.len() != n {
        return Err(Error::config("labels/etas length does not match logits"));
    }
    let k = logits.ncols();
    for &y in labels {
        if y >= k {
            return Err(Error::data(format!("label {y} out of range for {k} classes")));
        }
    }
    let mask = psa::filter_mask(etas, sigma_clf)?;
    let n_used = mask.iter().filter(|&&m| m).count();
    let mut d = Array2::zeros(logits.dim());
    if n_used == 0 {
        return Ok(InterClfOutcome {
            value: 0.0,
            d_logits: d,
            n_used: 0,
        });
    }
    let log_p = log_softmax_rows(logits);
    let scale = gamma / n_used as f64;
    let mut value = 0.0;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let y = labels[i];
        value += scale * etas[i] * (-log_p[[i, y]]);
        for c in 0..k {
            d[[i, c]] = scale * etas[i] * (log_p[[i, c]].exp() - f64::from(c == y));
        }
    }
    Ok(InterClfOutcome {
        value,
        d_logits: d,
        n_used,
    })
}

/// Combined objective `clf + alpha * eda + beta * psa`, with the alignment
/// term forced to zero during warm-up epochs.
pub fn total_loss(clf: f64, eda: f64, psa: f64, config: &TrainConfig, epoch: usize) -> Result<f64> {
    for (name, v) in [("clf", clf), ("eda", eda), ("psa", psa)] {
        if !v.is_finite() {
            return Err(Error::numeric("total_loss", format!("component '{name}' is non-finite")));
        }
    }
    let psa_term = if epoch < config.warmup_epochs { 0.0 } else { psa };
    Ok(clf + config.alpha * eda + config.beta * psa_term)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One row of the per-epoch history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_clf: f64,
    pub l_eda: f64,
    pub l_psa: f64,
    pub total: f64,
    pub n_aux_used_clf: u64,
    pub n_aux_used_align: u64,
    pub val_accuracy: Option<f64>,
    pub val_auc: Option<f64>,
}

pub const HISTORY_CSV_HEADER: &str =
    "epoch,l_clf,l_eda,l_psa,total,n_aux_used_clf,n_aux_used_align,val_accuracy,val_auc";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_CSV_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.l_clf,
            r.l_eda,
            r.l_psa,
            r.total,
            r.n_aux_used_clf,
            r.n_aux_used_align,
            opt_cell(r.val_accuracy),
            opt_cell(r.val_auc),
        ));
    }
    s
}

/// One auxiliary-sample encounter, for the per-epoch diagnostics file.
#[derive(Debug, Clone)]
pub struct DiagRecord {
    pub epoch: usize,
    pub sample_id: String,
    pub eta: f64,
    pub filtered_align: bool,
    pub filtered_clf: bool,
}

pub const DIAGNOSTICS_CSV_HEADER: &str = "sample_id,eta,filtered_align,filtered_clf";

pub fn diagnostics_to_csv(rows: &[DiagRecord]) -> String {
    let mut s = String::from(DIAGNOSTICS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.sample_id, r.eta, r.filtered_align, r.filtered_clf
        ));
    }
    s
}

/// Counters for soft failures that do not abort a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Warnings {
    /// Probabilities clamped inside the adversarial loss.
    pub bce_clamp_events: u64,
    /// Batches where every contrastive anchor lacked a positive.
    pub psa_no_positive_batches: u64,
    /// Batches where the alignment term was skipped (degenerate sizes).
    pub eda_skipped_batches: u64,
    /// Balanced-sampler draws that had to sample with replacement.
    pub sampler_replacement_draws: u64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub history: Vec<EpochRecord>,
    pub diagnostics: Vec<DiagRecord>,
    pub warnings: Warnings,
    /// RNG state of the master stream at the end of training.
    pub rng_state: crate::model::RngState,
}

/// Callback invoked after every completed epoch, e.g. for periodic
/// checkpointing.
pub type EpochHook<'a> = dyn FnMut(&Model, &EpochRecord) -> Result<()> + 'a;

/// Runs the full training protocol and returns the per-epoch history.
///
/// Per epoch: refresh prototypes from a no-gradient pass over the target
/// training set (once past warm-up), draw a balanced auxiliary subset the
/// size of the target set, then iterate paired mini-batches computing the
/// classification, alignment, and contrastive terms and taking one AdamW
/// step per batch. The auxiliary stream cycles with reshuffling when a
/// batch would exhaust it.
pub fn train(
    model: &mut Model,
    target_train: &LoadedDataset,
    aux: Option<&LoadedDataset>,
    val: Option<&LoadedDataset>,
    augment: Option<&AugmentPolicy>,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    train_with_hook(model, target_train, aux, val, augment, config, None)
}

/// [`train`] with an optional per-epoch hook.
pub fn train_with_hook(
    model: &mut Model,
    target_train: &LoadedDataset,
    aux: Option<&LoadedDataset>,
    val: Option<&LoadedDataset>,
    augment: Option<&AugmentPolicy>,
    config: &TrainConfig,
    mut hook: Option<&mut EpochHook>,
) -> Result<TrainOutput> {
    config.validate()?;
    if target_train.is_empty() {
        return Err(Error::data("target training set is empty"));
    }
    if target_train.num_classes != model.config.num_classes {
        return Err(Error::config(format!(
            "num_classes mismatch: dataset has {}, model has {}",
            target_train.num_classes, model.config.num_classes
        )));
    }
    if target_train.domain != DomainTag::Target {
        return Err(Error::data("target_train manifest is not tagged as target"));
    }
    let aux = match aux {
        Some(a) if !a.is_empty() => {
            if a.num_classes != model.config.num_classes {
                return Err(Error::config(format!(
                    "num_classes mismatch: auxiliary has {}, model has {}",
                    a.num_classes, model.config.num_classes
                )));
            }
            if a.domain != DomainTag::Auxiliary {
                return Err(Error::data("aux manifest is not tagged as auxiliary"));
            }
            Some(a)
        }
        _ => None,
    };
    let strategy = eda::build_strategy(&config.eda)?;
    let k = model.config.num_classes;

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    master.set_stream(1);

    // target-fraction subsample (membership only; order comes from the
    // per-epoch shuffle)
    let frac_seed = master.next_u64();
    let target_idx: Vec<usize> = {
        let n = target_train.len();
        if config.target_fraction >= 1.0 {
            (0..n).collect()
        } else {
            let m = ((config.target_fraction * n as f64).ceil() as usize).max(1);
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut ChaCha8Rng::seed_from_u64(frac_seed));
            let mut subset = all[..m].to_vec();
            subset.sort_unstable();
            subset
        }
    };
    let n_eff = target_idx.len();
    let bs_t = config.batch_size_target.min(n_eff);
    let batches_per_epoch = n_eff.div_ceil(config.batch_size_target).max(1);

    let mut adam = AdamW::new(config.learning_rate, config.weight_decay);
    let mut prototypes: Option<PrototypeTable> = None;
    let mut history = Vec::with_capacity(config.total_epochs);
    let mut diagnostics = Vec::new();
    let mut warnings = Warnings::default();

    for epoch in 0..config.total_epochs {
        let shuffle_seed = master.next_u64();
        let aux_seed = master.next_u64();
        let augment_seed = master.next_u64();

        let needs_eta = !config.force_eta_one && aux.is_some();
        if epoch >= config.warmup_epochs && needs_eta {
            let feats = classifier_hidden_features(model, target_train, &target_idx)?;
            let labels = target_train.labels_for(&target_idx);
            prototypes = Some(psa::compute_prototypes(&feats, &labels, k, epoch)?);
            if !prototypes.as_ref().unwrap().all_defined() {
                let missing: Vec<String> = prototypes
                    .as_ref()
                    .unwrap()
                    .class_counts()
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c == 0)
                    .map(|(c, _)| c.to_string())
                    .collect();
                return Err(Error::data(format!(
                    "target training set has no samples for class(es) {}",
                    missing.join(", ")
                )));
            }
        }

        let mut order = target_idx.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));

        let mut aux_rng = ChaCha8Rng::seed_from_u64(aux_seed);
        let mut aux_order: Vec<usize> = Vec::new();
        if let Some(aux_ds) = aux {
            let (subset, repl) = balanced_indices(&aux_ds.labels, k, n_eff, &mut aux_rng)?;
            warnings.sampler_replacement_draws += repl;
            aux_order = subset;
            aux_order.shuffle(&mut aux_rng);
        }
        let mut aux_cursor = 0usize;
        let mut aug_rng = ChaCha8Rng::seed_from_u64(augment_seed);

        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64); // clf, eda, psa, total
        let mut n_clf_used = 0u64;
        let mut n_align_used = 0u64;

        for b in 0..batches_per_epoch {
            let start = b * bs_t;
            let end = ((b + 1) * bs_t).min(n_eff);
            let t_indices = &order[start..end.max(start + 1).min(n_eff)];
            let t_labels = target_train.labels_for(t_indices);
            let xt = make_batch(
                target_train,
                t_indices,
                augment.map(|p| (p, &mut aug_rng)),
            )?;

            model.zero_grads();
            let (out_t, tr_t) = model.forward(&xt, DomainTag::Target)?;

            // auxiliary batch with wrap-around reshuffle
            let aux_batch = if let Some(aux_ds) = aux {
                let want = config.batch_size_aux.min(aux_order.len());
                let mut chosen = Vec::with_capacity(want);
                for _ in 0..want {
                    if aux_cursor >= aux_order.len() {
                        aux_order.shuffle(&mut aux_rng);
                        aux_cursor = 0;
                    }
                    chosen.push(aux_order[aux_cursor]);
                    aux_cursor += 1;
                }
                let labels = aux_ds.labels_for(&chosen);
                let ids = aux_ds.ids_for(&chosen);
                let xa = make_batch(aux_ds, &chosen, augment.map(|p| (p, &mut aug_rng)))?;
                let (out_a, tr_a) = model.forward(&xa, DomainTag::Auxiliary)?;
                Some((out_a, tr_a, labels, ids))
            } else {
                None
            };

            // consistency scores against the epoch-frozen prototypes
            let etas: Vec<f64> = match &aux_batch {
                None => Vec::new(),
                Some((out_a, _, labels_a, _)) => {
                    if config.force_eta_one || epoch < config.warmup_epochs || prototypes.is_none() {
                        vec![1.0; labels_a.len()]
                    } else {
                        let table = prototypes.as_ref().unwrap();
                        let mut etas = Vec::with_capacity(labels_a.len());
                        for (i, &y) in labels_a.iter().enumerate() {
                            let u = psa::soft_assign(out_a.f.row(i), table)?;
                            etas.push(psa::consistency_score(u.view(), y)?);
                        }
                        etas
                    }
                }
            };

            // classification terms
            let intra = intra_clf_loss(&out_t.logits, &t_labels)?;
            let inter = match &aux_batch {
                Some((out_a, _, labels_a, _)) => {
                    inter_clf_loss(&out_a.logits, labels_a, &etas, config.sigma_clf, config.gamma)?
                }
                None => InterClfOutcome {
                    value: 0.0,
                    d_logits: Array2::zeros((0, k)),
                    n_used: 0,
                },
            };
            let l_clf = intra.value + inter.value;
            n_clf_used += inter.n_used as u64;

            // alignment term
            let eda_out = match &aux_batch {
                Some((out_a, _, _, _)) if config.eda.variant != "off" => {
                    let n_t = out_t.pooled_intermediate.nrows();
                    let n_a = out_a.pooled_intermediate.nrows();
                    if config.eda.variant == "mkmmd" && (n_t < 2 || n_a < 2) {
                        warnings.eda_skipped_batches += 1;
                        EdaOutcome::default()
                    } else {
                        strategy.evaluate(
                            model,
                            &out_t.pooled_intermediate,
                            &out_a.pooled_intermediate,
                            config.alpha,
                            true,
                        )?
                    }
                }
                _ => EdaOutcome::default(),
            };
            warnings.bce_clamp_events += eda_out.clamp_events;

            // contrastive term, skipped during warm-up and when disabled
            let psa_active = epoch >= config.warmup_epochs && config.beta > 0.0;
            let (l_psa, d_z_t, d_z_a, aux_align_count) = if psa_active {
                let (z_a, y_a): (Array2<f64>, Vec<usize>) = match &aux_batch {
                    Some((out_a, _, labels_a, _)) => (out_a.z.clone(), labels_a.clone()),
                    None => (Array2::zeros((0, model.config.proj_dim)), Vec::new()),
                };
                let out = psa::psa_loss(
                    &out_t.z,
                    &t_labels,
                    &z_a,
                    &y_a,
                    &etas,
                    config.sigma_align,
                    config.temperature,
                    true,
                )?;
                if out.anchors_counted == 0 {
                    warnings.psa_no_positive_batches += 1;
                }
                let scale = config.beta;
                let d_t = out.d_z_target.map(|g| g.mapv(|v| v * scale));
                let d_a = out.d_z_aux.map(|g| g.mapv(|v| v * scale));
                (out.value, d_t, d_a, out.aux_included.len() as u64)
            } else {
                (0.0, None, None, 0)
            };
            n_align_used += aux_align_count;

            let total = total_loss(l_clf, eda_out.value, l_psa, config, epoch).map_err(|e| {
                e.annotate(&format!("epoch {epoch} batch {b}"))
            })?;

            // backward through both paths
            model.backward_path(
                &out_t,
                &tr_t,
                &HeadGrads {
                    d_logits: Some(&intra.d_logits),
                    d_z: d_z_t.as_ref(),
                    d_pooled: eda_out.d_pooled_target.as_ref(),
                },
            )?;
            if let Some((out_a, tr_a, labels_a, ids_a)) = &aux_batch {
                model.backward_path(
                    out_a,
                    tr_a,
                    &HeadGrads {
                        d_logits: Some(&inter.d_logits),
                        d_z: d_z_a.as_ref(),
                        d_pooled: eda_out.d_pooled_aux.as_ref(),
                    },
                )?;
                #[cfg(debug_assertions)]
                {
                    // filtering consistency: only admitted samples carry weight
                    for (i, &eta) in etas.iter().enumerate() {
                        let in_clf = eta >= config.sigma_clf;
                        if !in_clf {
                            debug_assert!(inter.d_logits.row(i).iter().all(|&v| v == 0.0));
                        }
                    }
                    let _ = labels_a;
                }
                for (i, id) in ids_a.iter().enumerate() {
                    diagnostics.push(DiagRecord {
                        epoch,
                        sample_id: id.clone(),
                        eta: etas[i],
                        filtered_align: etas[i] >= config.sigma_align,
                        filtered_clf: etas[i] >= config.sigma_clf,
                    });
                }
            }

            adam.step(|f| model.for_each_param(f));

            sums.0 += l_clf;
            sums.1 += eda_out.value;
            sums.2 += l_psa;
            sums.3 += total;
        }

        let nb = batches_per_epoch as f64;
        let (val_accuracy, val_auc) = match val {
            Some(v) if !v.is_empty() => {
                let (scores, labels) = evalsuite::score_dataset(model, v)?;
                let acc = evalsuite::argmax_accuracy(&scores, &labels);
                let auc = if model.config.num_classes == 2 {
                    evalsuite::binary_auc(
                        &scores.column(1).to_owned().to_vec(),
                        &labels.iter().map(|&l| l == 1).collect::<Vec<_>>(),
                    )
                } else {
                    None
                };
                (Some(acc), auc)
            }
            _ => (None, None),
        };

        history.push(EpochRecord {
            epoch,
            l_clf: sums.0 / nb,
            l_eda: sums.1 / nb,
            l_psa: sums.2 / nb,
            total: sums.3 / nb,
            n_aux_used_clf: n_clf_used,
            n_aux_used_align: n_align_used,
            val_accuracy,
            val_auc,
        });
        if let Some(h) = hook.as_deref_mut() {
            h(model, history.last().expect("just pushed"))?;
        }
    }

    Ok(TrainOutput {
        history,
        diagnostics,
        warnings,
        rng_state: crate::model::RngState::capture(&master),
    })
}

/// No-gradient pass collecting the classifier hidden features `f` of the
/// given target samples under the current parameter snapshot.
pub fn classifier_hidden_features(
    model: &Model,
    ds: &LoadedDataset,
    indices: &[usize],
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((indices.len(), model.config.hidden_dim_f));
    for chunk in indices.chunks(256) {
        let batch = make_batch(ds, chunk, None)?;
        let outputs = model.infer(&batch, DomainTag::Target)?;
        let offset = indices
            .iter()
            .position(|&i| i == chunk[0])
            .expect("chunk comes from indices");
        for (row, _) in chunk.iter().enumerate() {
            out.row_mut(offset + row).assign(&outputs.f.row(row));
        }
    }
    Ok(out)
}

/// Mean of per-sample eta-weighted CE as a standalone vector, used by tests.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = log_softmax_rows(logits);
    out.mapv_inplace(f64::exp);
    out
}

/// Per-sample cross-entropy values (softmax + negative log likelihood).
pub fn per_sample_ce(logits: &Array2<f64>, labels: &[usize]) -> Result<Array1<f64>> {
    if logits.nrows() != labels.len() {
        return Err(Error::config("labels length does not match logits"));
    }
    let log_p = log_softmax_rows(logits);
    let mut out = Array1::zeros(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        if y >= logits.ncols() {
            return Err(Error::data(format!("label {y} out of range")));
        }
        out[i] = -log_p[[i, y]];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = arr2(&[[0.0, 0.0], [1.0, 1.0]]);
        let out = intra_clf_loss(&logits, &[0, 1]).unwrap();
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let logits = arr2(&[[40.0, 0.0], [0.0, 40.0]]);
        let out = intra_clf_loss(&logits, &[0, 1]).unwrap();
        assert!(out.value < 1e-12);
    }

    #[test]
    fn intra_ce_matches_per_sample_hand_computation() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let logits = Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
        let labels = [2usize, 0, 1, 1];
        let out = intra_clf_loss(&logits, &labels).unwrap();
        // scalar-by-scalar recomputation
        let mut expected = 0.0;
        for i in 0..4 {
            let row: Vec<f64> = logits.row(i).to_vec();
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            expected += -(row[labels[i]].exp() / denom).ln();
        }
        expected /= 4.0;
        assert!((out.value - expected).abs() < 1e-10);
    }

    #[test]
    fn intra_ce_rejects_bad_labels() {
        let logits = arr2(&[[0.0, 0.0]]);
        assert!(matches!(
            intra_clf_loss(&logits, &[2]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn intra_ce_gradient_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let logits = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let labels = [1usize, 3, 0];
        let out = intra_clf_loss(&logits, &labels).unwrap();
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..4 {
                let mut lp = logits.clone();
                lp[[r, c]] += h;
                let mut lm = logits.clone();
                lm[[r, c]] -= h;
                let fd = (intra_clf_loss(&lp, &labels).unwrap().value
                    - intra_clf_loss(&lm, &labels).unwrap().value)
                    / (2.0 * h);
                let rel = (fd - out.d_logits[[r, c]]).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4);
            }
        }
    }

    #[test]
    fn inter_ce_empty_filter_is_zero() {
        let logits = arr2(&[[0.0, 0.0], [0.0, 0.0]]);
        let out = inter_clf_loss(&logits, &[0, 1], &[0.5, 0.3], 0.9, 0.1).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.n_used, 0);
        assert!(out.d_logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inter_ce_single_sample_hand_value() {
        // gamma * eta * ln 2 for one uniform-logit sample
        let logits = arr2(&[[0.0, 0.0]]);
        let out = inter_clf_loss(&logits, &[0], &[0.8], 0.5, 0.1).unwrap();
        let expected = 0.1 * 0.8 * std::f64::consts::LN_2;
        assert!((out.value - expected).abs() < 1e-12);
        assert!((out.value - 0.05545).abs() < 1e-4);
        assert_eq!(out.n_used, 1);
    }

    #[test]
    fn inter_ce_zero_gamma_is_zero() {
        let logits = arr2(&[[1.0, -1.0], [0.5, 0.2]]);
        let out = inter_clf_loss(&logits, &[0, 1], &[1.0, 1.0], 0.0, 0.0).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.n_used, 2);
    }

    #[test]
    fn inter_ce_gradient_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let logits = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let labels = [0usize, 2, 1, 1];
        let etas = [0.95, 0.4, 0.91, 0.99];
        let (sigma, gamma) = (0.9, 0.7);
        let out = inter_clf_loss(&logits, &labels, &etas, sigma, gamma).unwrap();
        let h = 1e-6;
        for r in 0..4 {
            for c in 0..3 {
                let mut lp = logits.clone();
                lp[[r, c]] += h;
                let mut lm = logits.clone();
                lm[[r, c]] -= h;
                let fd = (inter_clf_loss(&lp, &labels, &etas, sigma, gamma).unwrap().value
                    - inter_clf_loss(&lm, &labels, &etas, sigma, gamma).unwrap().value)
                    / (2.0 * h);
                let diff = (fd - out.d_logits[[r, c]]).abs();
                assert!(diff / fd.abs().max(1e-6) < 1e-4 || diff < 1e-10);
            }
        }
    }

    #[test]
    fn eta_weight_monotonicity() {
        let logits = arr2(&[[0.3, -0.2], [0.1, 0.4]]);
        let labels = [0usize, 1];
        let lo = inter_clf_loss(&logits, &labels, &[0.9, 0.95], 0.5, 0.1).unwrap();
        let hi = inter_clf_loss(&logits, &labels, &[0.99, 0.95], 0.5, 0.1).unwrap();
        // raising one included sample's eta strictly raises its contribution
        assert!(hi.value > lo.value);
    }

    #[test]
    fn total_loss_examples() {
        let config = TrainConfig::default(); // alpha 0.1, beta 0.01, warmup 5
        let after = total_loss(1.0, 2.0, 3.0, &config, 10).unwrap();
        assert!((after - 1.23).abs() < 1e-12);
        let during = total_loss(1.0, 2.0, 3.0, &config, 3).unwrap();
        assert!((during - 1.2).abs() < 1e-12);
        let bare = TrainConfig {
            alpha: 0.0,
            beta: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(total_loss(1.5, 9.0, 9.0, &bare, 10).unwrap(), 1.5);
    }

    #[test]
    fn total_loss_rejects_non_finite_components() {
        let config = TrainConfig::default();
        let err = total_loss(f64::NAN, 0.0, 0.0, &config, 0).unwrap_err();
        assert!(err.to_string().contains("clf"));
        let err = total_loss(0.0, f64::INFINITY, 0.0, &config, 0).unwrap_err();
        assert!(err.to_string().contains("eda"));
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut c = TrainConfig::default();
        c.sigma_align = 1.2;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.warmup_epochs = 20;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size_target = 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.target_fraction = 0.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
